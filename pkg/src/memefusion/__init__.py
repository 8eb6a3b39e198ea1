"""memefusion: multimodal meme sentiment/humor classification toolkit."""

__version__ = "0.1.0"

from .data import (ClassDistribution, DatasetSplit, LabelValues, MemeSample,
                   SignalSpec, SUBTASKS, SyntheticSpec, TASK_GROUPS,
                   class_distribution, compute_class_weights, generate_synthetic,
                   load_manifest, oversample_to_balance, split_train_val,
                   task_label, write_manifest)
from .errors import (ConfigError, DataError, EvaluationError, MemeFusionError,
                     ModelBuildError, TrainingError)
from .evaluation import (BASELINE_SCORES, RunResult, TaskScore, load_predictions,
                         macro_f1, report_table, task_score, write_predictions)
from .fusion import EarlyFusion, GatedMultimodalUnit, late_fuse
from .models import (Batch, MemeClassifier, ModelSpec, TaskHead, build_model,
                     encode_batch, forward_probs, mtl_loss, mtl_task_pairs,
                     task_pairs)
from .text import (OOV_ID, PAD_ID, TfidfEncoder, TokenSequence, Vocab, build_vocab,
                   encode_sequence, preprocess_text, tfidf_logreg_baseline)
from .training import (EarlyStopping, TrainConfig, TrainHistory, predict, train,
                       weighted_cross_entropy)
from .encoders import (BiLstmTextEncoder, ConvImageEncoder, ImageEncoderConfig,
                       PretrainedAdapter, TextEncoderConfig, available_backbones,
                       preprocess_image, pretrained_adapter, register_backbone,
                       unregister_backbone)
