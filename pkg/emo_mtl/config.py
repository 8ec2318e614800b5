"""
YAML run configurations.

A run file names the encoder shape, the vocabulary limits, the training
schedule and the tasks with their datasets; see ``hs_emo_config.yml`` next to
this module for a complete example.
"""
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigError
from .multitask import MODES, ROLES, SAMPLERS

logger = logging.getLogger(__name__)

OUTPUT_ROOT_ENV = "EMO_MTL_OUTPUT_ROOT"

ENCODER_DEFAULTS = {
    "d_model": 64,
    "n_heads": 4,
    "d_ff": 128,
    "n_layers": 2,
    "max_seq_len": 64,
    "dropout_p": 0.1,
    "layernorm_eps": 1e-12,
}
VOCABULARY_DEFAULTS = {"min_frequency": 1, "max_size": None}
TRAINING_DEFAULTS = {
    "mode": "MTL",
    "epochs": 3,
    "batch_size": 8,
    "lr": 1e-5,
    "train_fraction": 0.8,
    "sampler": "proportional",
    "stratified": True,
    "freeze_encoder": False,
    "main_task": None,
}
TASK_DEFAULTS = {
    "role": "main",
    "val_path": None,
    "text_column": "text",
    "label_column": "label",
}
FLOAT_FIELDS = {"encoder": ("dropout_p", "layernorm_eps"), "training": ("lr", "train_fraction")}
INT_FIELDS = {
    "encoder": ("d_model", "n_heads", "d_ff", "n_layers", "max_seq_len"),
    "vocabulary": ("min_frequency", "max_size"),
    "training": ("epochs", "batch_size"),
}


@dataclass
class TaskConfig:
    name: str
    label_names: list
    train_path: Path
    role: str = "main"
    val_path: Path = None
    text_column: str = "text"
    label_column: str = "label"

    def spec_kwargs(self):
        return {
            "name": self.name,
            "label_names": tuple(self.label_names),
            "role": self.role,
            "train_path": str(self.train_path),
            "val_path": None if self.val_path is None else str(self.val_path),
            "text_column": self.text_column,
            "label_column": self.label_column,
        }


@dataclass
class RunConfig:
    seed: int
    output_dir: Path
    tasks: list
    encoder: dict = field(default_factory=lambda: dict(ENCODER_DEFAULTS))
    vocabulary: dict = field(default_factory=lambda: dict(VOCABULARY_DEFAULTS))
    training: dict = field(default_factory=lambda: dict(TRAINING_DEFAULTS))
    source: Path = None

    @property
    def mode(self):
        return self.training["mode"]

    @property
    def main_task(self):
        if self.training.get("main_task"):
            return self.training["main_task"]
        mains = [task.name for task in self.tasks if task.role == "main"]
        return mains[0] if mains else None

    def active_tasks(self):
        "Tasks that take part in training: only the main task in STL mode."
        if self.mode == "STL":
            return [task for task in self.tasks if task.name == self.main_task]
        return list(self.tasks)

    def to_dict(self):
        "Normalized form: every default filled in, paths as strings."
        return {
            "seed": self.seed,
            "output_dir": str(self.output_dir),
            "encoder": dict(self.encoder),
            "vocabulary": dict(self.vocabulary),
            "training": dict(self.training),
            "tasks": [
                {
                    "name": task.name,
                    "role": task.role,
                    "label_names": list(task.label_names),
                    "train_path": str(task.train_path),
                    "val_path": None if task.val_path is None else str(task.val_path),
                    "text_column": task.text_column,
                    "label_column": task.label_column,
                }
                for task in self.tasks
            ],
        }


def _coerce(section, values, problems):
    # PyYAML reads "1e-5" (no dot) as a string.
    for key in FLOAT_FIELDS.get(section, ()):
        value = values.get(key)
        if isinstance(value, str):
            try:
                values[key] = float(value)
            except ValueError:
                problems[f"{section}.{key}"] = f"expected a number, got {value!r}"
        elif isinstance(value, int) and not isinstance(value, bool):
            values[key] = float(value)
    for key in INT_FIELDS.get(section, ()):
        value = values.get(key)
        if value is None and key == "max_size":
            continue
        if isinstance(value, bool) or not isinstance(value, int):
            problems[f"{section}.{key}"] = f"expected an integer, got {value!r}"


def _section(document, name, defaults, problems):
    values = document.get(name) or {}
    if not isinstance(values, dict):
        problems[name] = "expected a mapping"
        return dict(defaults)
    unknown = sorted(set(values) - set(defaults))
    for key in unknown:
        problems[f"{name}.{key}"] = "unknown field"
    merged = dict(defaults)
    merged.update({key: value for key, value in values.items() if key in defaults})
    _coerce(name, merged, problems)
    return merged


def _resolve(base, value):
    path = Path(os.path.expanduser(str(value)))
    return path if path.is_absolute() else (base / path)


def _output_dir(base, value):
    root = os.environ.get(OUTPUT_ROOT_ENV)
    path = Path(os.path.expanduser(str(value)))
    if path.is_absolute():
        return path
    return (Path(root).resolve() / path) if root else base / path


def _tasks(document, base, problems, check_paths):
    raw_tasks = document.get("tasks")
    if not isinstance(raw_tasks, list) or not raw_tasks:
        problems["tasks"] = "need a non-empty list of tasks"
        return []
    tasks = []
    seen = set()
    for i, raw in enumerate(raw_tasks):
        where = f"tasks[{i}]"
        if not isinstance(raw, dict):
            problems[where] = "expected a mapping"
            continue
        known = {"name", "label_names", "train_path"} | set(TASK_DEFAULTS)
        for key in sorted(set(raw) - known):
            problems[f"{where}.{key}"] = "unknown field"
        values = dict(TASK_DEFAULTS)
        values.update(raw)
        name = values.get("name")
        if not name or not isinstance(name, str):
            problems[f"{where}.name"] = "required"
        elif name in seen:
            problems[f"{where}.name"] = f"duplicate task name {name!r}"
        seen.add(name)
        labels = values.get("label_names")
        if not isinstance(labels, list) or len(labels) < 2:
            problems[f"{where}.label_names"] = "need a list of at least 2 labels"
        elif len(set(map(str, labels))) != len(labels):
            problems[f"{where}.label_names"] = "labels must be unique"
        if values["role"] not in ROLES:
            problems[f"{where}.role"] = f"must be one of {', '.join(ROLES)}, got {values['role']!r}"
        paths = {}
        for key in ("train_path", "val_path"):
            if values.get(key) is None:
                if key == "train_path":
                    problems[f"{where}.train_path"] = "required"
                paths[key] = None
                continue
            paths[key] = _resolve(base, values[key])
            if check_paths and not paths[key].is_file():
                problems[f"{where}.{key}"] = f"file not found: {paths[key]}"
        tasks.append(
            TaskConfig(
                name=name,
                label_names=[str(label) for label in labels] if isinstance(labels, list) else [],
                train_path=paths["train_path"],
                role=values["role"],
                val_path=paths["val_path"],
                text_column=str(values["text_column"]),
                label_column=str(values["label_column"]),
            )
        )
    return tasks


def _check_training(training, tasks, problems):
    mode = str(training["mode"]).upper()
    training["mode"] = mode
    if mode not in MODES:
        problems["training.mode"] = f"must be MTL or STL, got {training['mode']!r}"
    if training["sampler"] not in SAMPLERS:
        problems["training.sampler"] = f"must be one of {', '.join(SAMPLERS)}"
    if isinstance(training["epochs"], int) and training["epochs"] < 0:
        problems["training.epochs"] = "must not be negative"
    if isinstance(training["batch_size"], int) and training["batch_size"] < 1:
        problems["training.batch_size"] = "must be positive"
    if isinstance(training["lr"], float) and not training["lr"] > 0:
        problems["training.lr"] = "must be positive"
    fraction = training["train_fraction"]
    if isinstance(fraction, float) and not 0.0 < fraction < 1.0:
        problems["training.train_fraction"] = "must lie in (0, 1)"

    names = [task.name for task in tasks]
    mains = [task.name for task in tasks if task.role == "main"]
    main_task = training.get("main_task")
    if main_task is not None and main_task not in names:
        problems["training.main_task"] = f"unknown task {main_task!r}"
    if mode == "STL" and main_task is None and len(mains) != 1:
        problems["tasks.role"] = (
            f"STL mode needs exactly one main task, found {len(mains)}"
            + (f" ({', '.join(mains)})" if mains else "")
        )
    if mode == "MTL" and tasks and not mains and main_task is None:
        problems["tasks.role"] = "MTL mode needs a main task"


def parse_config(document, base=".", check_paths=True):
    """
    Validate a run document (the parsed YAML mapping) into a RunConfig.

    Parameters
    ----------
    document : dict
    base : path-like
        Directory that relative dataset and output paths resolve against.
    check_paths : bool
        Require every dataset file to exist.

    Raises
    ------
    ConfigError
        Listing every invalid field by its dotted path.
    """
    problems = {}
    base = Path(base).resolve()
    if not isinstance(document, dict):
        raise ConfigError({"config": "expected a YAML mapping at the top level"})
    known = {"seed", "output_dir", "encoder", "vocabulary", "training", "tasks"}
    for key in sorted(set(document) - known):
        problems[key] = "unknown field"

    seed = document.get("seed")
    if isinstance(seed, bool) or not isinstance(seed, int):
        problems["seed"] = f"required integer, got {seed!r}"
    output_dir = document.get("output_dir") or "runs"

    encoder = _section(document, "encoder", ENCODER_DEFAULTS, problems)
    vocabulary = _section(document, "vocabulary", VOCABULARY_DEFAULTS, problems)
    training = _section(document, "training", TRAINING_DEFAULTS, problems)
    tasks = _tasks(document, base, problems, check_paths)
    _check_training(training, tasks, problems)

    if problems:
        raise ConfigError(problems)
    return RunConfig(
        seed=seed,
        output_dir=_output_dir(base, output_dir),
        tasks=tasks,
        encoder=encoder,
        vocabulary=vocabulary,
        training=training,
    )


def load_config(path, check_paths=True, overrides=None):
    """
    Read and validate a YAML run file.

    ``overrides`` maps top-level or ``training.<key>`` names to values that
    replace the file's (the CLI's ``--seed`` and ``--epochs``).
    """
    path = Path(path)
    with open(path, encoding="utf-8") as file:
        try:
            document = yaml.safe_load(file)
        except yaml.YAMLError as err:
            raise ConfigError({"config": f"{path.name} is not valid YAML: {err}"}) from None
    if isinstance(document, dict):
        for key, value in (overrides or {}).items():
            if value is None:
                continue
            section, _, leaf = key.rpartition(".")
            if section:
                document.setdefault(section, {})
                document[section][leaf] = value
            else:
                document[key] = value
    config = parse_config(document, base=path.parent, check_paths=check_paths)
    config.source = path
    logger.debug("loaded run config %s", path)
    return config


def dump_config(config, path):
    "Write the normalized form of ``config`` as YAML."
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as file:
        yaml.safe_dump(config.to_dict(), file, sort_keys=False)
    return path
