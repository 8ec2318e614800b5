from pathlib import Path

import numpy as np
import pandas as pd
import pytest
import yaml

from ..encoder import EncoderConfig, init_encoder
from ..multitask import MultitaskModel, TaskSpec, register_task
from ..text_pipeline import Vocabulary

HS_TEXTS = {
    "hate": [
        "i hate those vile people",
        "vile people should go away",
        "those people are vile trash",
        "go away vile trash people",
    ],
    "normal": [
        "what a lovely sunny day",
        "the game was great fun today",
        "lovely coffee with good friends",
        "great day at the park with friends",
    ],
}
EMO_TEXTS = {
    "anger": ["so angry at this mess", "this makes me furious and angry"],
    "joy": ["so happy and glad today", "what a happy joyful morning"],
    "neutral": ["the bus leaves at noon", "meeting moved to tuesday"],
}


@pytest.fixture
def toy_config():
    return EncoderConfig(
        vocab_size=12, d_model=8, n_heads=2, d_ff=16, n_layers=1, max_seq_len=6, dropout_p=0.0
    )


@pytest.fixture
def toy_model(toy_config):
    vocab = Vocabulary(["a", "b", "c", "d", "e", "f", "g", "h"])
    model = MultitaskModel(init_encoder(toy_config, seed=0), vocab=vocab, lr=1e-3)
    register_task(model, TaskSpec("HS", ("normal", "hate")), seed=1)
    register_task(model, TaskSpec("EMO", ("anger", "joy", "neutral"), role="auxiliary"), seed=2)
    return model


def write_corpus(path, texts_by_label, repeat=1, text_column="text", label_column="label"):
    rows = [
        (text, label)
        for _ in range(repeat)
        for label, texts in texts_by_label.items()
        for text in texts
    ]
    df = pd.DataFrame(rows, columns=[text_column, label_column])
    df.to_csv(path, index=False)
    return Path(path)


@pytest.fixture
def corpora(tmp_path):
    data = tmp_path / "data"
    data.mkdir()
    hs = write_corpus(data / "hs.csv", HS_TEXTS, repeat=3, text_column="tweet")
    emo_train = write_corpus(data / "emo_train.csv", EMO_TEXTS, repeat=2, label_column="labels")
    emo_dev = write_corpus(data / "emo_dev.csv", EMO_TEXTS, label_column="labels")
    return {"HS": hs, "EMO_TRAIN": emo_train, "EMO_DEV": emo_dev}


def run_document(mode="MTL", epochs=2, output_dir="out"):
    tasks = [
        {
            "name": "HS",
            "role": "main",
            "label_names": ["normal", "hate"],
            "train_path": "data/hs.csv",
            "text_column": "tweet",
            "label_column": "label",
        }
    ]
    if mode == "MTL":
        tasks.append(
            {
                "name": "EMO",
                "role": "auxiliary",
                "label_names": ["anger", "joy", "neutral"],
                "train_path": "data/emo_train.csv",
                "val_path": "data/emo_dev.csv",
                "label_column": "labels",
            }
        )
    return {
        "seed": 5,
        "output_dir": output_dir,
        "encoder": {
            "d_model": 8,
            "n_heads": 2,
            "d_ff": 16,
            "n_layers": 1,
            "max_seq_len": 12,
            "dropout_p": 0.1,
        },
        "vocabulary": {"min_frequency": 1},
        "training": {"mode": mode, "epochs": epochs, "batch_size": 4, "lr": 1e-3},
        "tasks": tasks,
    }


@pytest.fixture
def run_config_path(tmp_path, corpora):
    path = tmp_path / "run.yml"
    with open(path, "w") as file:
        yaml.safe_dump(run_document(), file)
    return path


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
