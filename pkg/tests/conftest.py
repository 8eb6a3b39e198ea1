import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from memefusion.data import LabelValues, MemeSample
from memefusion.encoders import ImageEncoderConfig, TextEncoderConfig

# Published label distributions of the shared-task corpus (train / validation).
TABLE1 = {
    "train": {
        "sentiment": [519, 1894, 3530],
        "humor": [1400, 2060, 1952, 531],
        "sarcasm": [1304, 2983, 1323, 333],
        "offence": [2289, 2203, 1259, 192],
        "motivation": [3844, 2099],
    },
    "val": {
        "sentiment": [112, 307, 630],
        "humor": [251, 392, 286, 120],
        "sarcasm": [240, 524, 224, 61],
        "offence": [424, 389, 207, 29],
        "motivation": [681, 368],
    },
}


def table1_samples(split="train"):
    """Synthetic dataset whose per-column marginals match the published counts.

    Columns are generated independently (the joint distribution is arbitrary,
    only the marginals matter for distribution tests).
    """
    dist = TABLE1[split]
    n = sum(dist["sentiment"])
    columns = {}
    for column, counts in dist.items():
        values = []
        for cls, count in enumerate(counts):
            values.extend([cls] * count)
        assert len(values) == n
        columns[column] = values
    return [
        MemeSample(
            id=f"{split}{i:05d}",
            text=f"meme text {i}",
            image_ref=None,
            labels=LabelValues(**{c: columns[c][i] for c in columns}),
        )
        for i in range(n)
    ]


@pytest.fixture(scope="session")
def table1_train():
    return table1_samples("train")


@pytest.fixture(scope="session")
def table1_val():
    return table1_samples("val")


def toy_text_config(vocab_size, **overrides):
    defaults = dict(embedding_dim=8, lstm_units=6, dropout=0.2,
                    recurrent_dropout=0.0, num_layers=1, max_len=8)
    defaults.update(overrides)
    return TextEncoderConfig(vocab_size=vocab_size, **defaults)


def toy_image_config(**overrides):
    defaults = dict(input_size=16, conv_filters=(6, 8), kernel_sizes=(5, 3),
                    strides=(2, 1), paddings=(2, 1), pool_after=(0,),
                    dense_sizes=(16,), dropout=0.2, rescale=True)
    defaults.update(overrides)
    return ImageEncoderConfig(**defaults)


def make_samples(labels_list, texts=None, images=None, prefix="s"):
    """Quick dataset builder; labels_list holds dicts of raw label columns."""
    out = []
    for i, labels in enumerate(labels_list):
        full = dict(sentiment=0, humor=0, sarcasm=0, offence=0, motivation=0)
        full.update(labels)
        out.append(MemeSample(
            id=f"{prefix}{i:04d}",
            text=texts[i] if texts else f"text {i}",
            image_ref=images[i] if images else None,
            labels=LabelValues(**full),
        ))
    return out
