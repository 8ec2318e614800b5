"""
Hard-parameter-sharing multi-task classification.

One :class:`~emo_mtl.encoder.EncoderState` is shared by every registered task;
each task owns a linear head followed by softmax. Training interleaves
task-tagged batches, so each step updates the encoder and the head of the
batch's task only.
"""
import json
import logging
import math
import zlib
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .encoder import encode, pool_cls
from .errors import ConfigError, DataError, RegistryError
from .metrics import confusion, scores
from .optim import AdamState, adam_step
from .tensor import FLOAT, Tensor, cross_entropy, softmax
from .text_pipeline import encode as encode_text
from .text_pipeline import build_lexicon, preprocess

logger = logging.getLogger(__name__)

ROLES = ("main", "auxiliary")
SAMPLERS = ("proportional", "uniform")
MODES = ("MTL", "STL")
HEAD_INIT_STD = 0.02


@dataclass
class TaskSpec:
    """
    A registered classification task and its dataset binding.

    ``val_path`` set means the corpus comes pre-split (GoEmotions); otherwise
    ``train_path`` is split 80/20.
    """

    name: str
    label_names: tuple
    role: str = "main"
    train_path: str = None
    val_path: str = None
    text_column: str = "text"
    label_column: str = "label"

    def __post_init__(self):
        self.label_names = tuple(self.label_names)
        problems = {}
        if not self.name:
            problems["name"] = "must not be empty"
        if len(self.label_names) < 2:
            problems["label_names"] = f"need at least 2 labels, got {len(self.label_names)}"
        elif len(set(self.label_names)) != len(self.label_names):
            problems["label_names"] = "labels must be unique"
        if self.role not in ROLES:
            problems["role"] = f"must be one of {', '.join(ROLES)}, got {self.role!r}"
        if problems:
            raise ConfigError({f"task {self.name}.{key}": value for key, value in problems.items()})

    @property
    def num_classes(self):
        return len(self.label_names)

    @property
    def pre_split(self):
        return self.val_path is not None


@dataclass
class TaskHead:
    W: Tensor
    b: Tensor

    def params(self):
        return {"W": self.W, "b": self.b}


@dataclass
class Batch:
    task: str
    ids: np.ndarray
    mask: np.ndarray
    labels: np.ndarray = None

    def __len__(self):
        return self.ids.shape[0]


@dataclass
class Prediction:
    text: str
    label: int = None
    label_name: str = None
    probabilities: np.ndarray = None
    rejected: bool = False


class MultitaskModel:
    """
    The shared encoder, one head per task and the Adam state over both.

    ``rng`` drives dropout for steps that are not given a generator.
    """

    def __init__(self, encoder, vocab=None, lr=1e-5, seed=0):
        self.encoder = encoder
        self.vocab = vocab
        self.tasks = {}
        self.heads = {}
        self.optimizer = AdamState(lr=lr)
        self.encoder_frozen = False
        self.rng = np.random.default_rng(seed)

    def __repr__(self):
        return f"<MultitaskModel tasks={list(self.tasks)} params={self.parameter_count()}>"

    def named_parameters(self):
        params = {f"encoder.{name}": tensor for name, tensor in self.encoder.params.items()}
        for task, head in self.heads.items():
            params.update({f"head.{task}.{key}": tensor for key, tensor in head.params().items()})
        return params

    def parameter_count(self):
        return sum(tensor.size for tensor in self.named_parameters().values())

    def freeze_encoder(self, frozen=True):
        "Keep the encoder out of the graph so only heads train."
        self.encoder_frozen = frozen
        for tensor in self.encoder.params.values():
            tensor.requires_grad = not frozen
            tensor.grad = None

    def step_parameters(self, task):
        "Parameters updated by a step on ``task``: encoder (unless frozen) and its head."
        params = {} if self.encoder_frozen else {
            f"encoder.{name}": tensor for name, tensor in self.encoder.params.items()
        }
        params.update(
            {f"head.{task}.{key}": tensor for key, tensor in self.heads[task].params().items()}
        )
        return params

    def snapshot(self):
        return {name: tensor.data.copy() for name, tensor in self.named_parameters().items()}

    def restore(self, snapshot):
        for name, tensor in self.named_parameters().items():
            tensor.data = snapshot[name].copy()

    def main_task(self):
        mains = [name for name, spec in self.tasks.items() if spec.role == "main"]
        return mains[0] if mains else None


def register_task(model, spec, seed):
    """
    Add a softmax head for ``spec``: W ~ Normal(0, 0.02) of shape [d x C], b = 0.

    Raises
    ------
    RegistryError
        If a task with the same name is already registered.
    """
    if spec.name in model.heads:
        raise RegistryError(f"task {spec.name!r} is already registered")
    rng = np.random.default_rng(seed)
    width = model.encoder.config.d_model
    head = TaskHead(
        W=Tensor(
            rng.normal(0.0, HEAD_INIT_STD, size=(width, spec.num_classes)).astype(FLOAT),
            requires_grad=True,
            name=f"head.{spec.name}.W",
        ),
        b=Tensor(np.zeros(spec.num_classes, dtype=FLOAT), requires_grad=True,
                 name=f"head.{spec.name}.b"),
    )
    model.tasks[spec.name] = spec
    model.heads[spec.name] = head
    for key, tensor in head.params().items():
        name = f"head.{spec.name}.{key}"
        model.optimizer.m[name] = np.zeros_like(tensor.data)
        model.optimizer.v[name] = np.zeros_like(tensor.data)
        model.optimizer.steps[name] = 0
    logger.debug("registered task %s with %d classes", spec.name, spec.num_classes)
    return model


def forward_task(model, batch, training=False, rng=None):
    "encode -> CLS pooling -> the task's affine head -> softmax; [B x C] probabilities."
    if batch.task not in model.heads:
        raise RegistryError(f"unknown task {batch.task!r}")
    hidden = encode(batch.ids, batch.mask, model.encoder, training=training, rng=rng)
    head = model.heads[batch.task]
    return softmax(pool_cls(hidden) @ head.W + head.b)


def _task_key(task):
    return zlib.crc32(task.encode("utf-8"))


class TaskDataLoader:
    "Batches of one task's encoded examples, reshuffled per epoch."

    def __init__(self, task, examples, batch_size=8, seed=0, shuffle=True):
        if batch_size < 1:
            raise ConfigError({"training.batch_size": f"must be positive, got {batch_size}"})
        self.task = task
        self.examples = list(examples)
        self.batch_size = batch_size
        self.seed = seed
        self.shuffle = shuffle
        self._epoch = 0

    def __len__(self):
        return math.ceil(len(self.examples) / self.batch_size)

    def __iter__(self):
        self._epoch += 1
        return self.iter_epoch(self._epoch)

    def iter_epoch(self, epoch):
        order = np.arange(len(self.examples))
        if self.shuffle:
            rng = np.random.default_rng([self.seed, epoch, _task_key(self.task)])
            order = rng.permutation(order)
        for start in range(0, len(order), self.batch_size):
            chunk = [self.examples[i] for i in order[start: start + self.batch_size]]
            yield Batch(
                task=self.task,
                ids=np.stack([example.ids for example in chunk]),
                mask=np.stack([example.attention_mask for example in chunk]),
                labels=np.array([example.label for example in chunk], dtype=np.int64),
            )


class MultitaskDataLoader:
    """
    Combine per-task loaders into one task-tagged batch stream.

    One epoch yields every batch of every task exactly once. ``proportional``
    shuffles the multiset of task slots, so a task with k batches appears k
    times at uniformly random positions; ``uniform`` draws the next task
    uniformly among tasks that still have batches.
    """

    def __init__(self, loaders, seed=0, sampler="proportional"):
        if isinstance(loaders, dict):
            loaders = list(loaders.values())
        if sampler not in SAMPLERS:
            raise ConfigError({"training.sampler": f"must be one of {', '.join(SAMPLERS)}"})
        self.loaders = list(loaders)
        self.seed = seed
        self.sampler = sampler
        self._epoch = 0
        if not self.loaders or not sum(len(loader) for loader in self.loaders):
            raise DataError("multitask loader needs at least one non-empty task loader")

    def __len__(self):
        return sum(len(loader) for loader in self.loaders)

    def __iter__(self):
        self._epoch += 1
        return self.iter_epoch(self._epoch)

    def task_order(self, epoch):
        rng = np.random.default_rng([self.seed, epoch])
        counts = np.array([len(loader) for loader in self.loaders])
        if self.sampler == "proportional":
            return rng.permutation(np.repeat(np.arange(len(counts)), counts))
        remaining = counts.copy()
        order = []
        while remaining.sum():
            live = np.flatnonzero(remaining)
            pick = live[rng.integers(len(live))]
            order.append(pick)
            remaining[pick] -= 1
        return np.array(order)

    def iter_epoch(self, epoch):
        streams = [loader.iter_epoch(epoch) for loader in self.loaders]
        for index in self.task_order(epoch):
            yield next(streams[index])


def joint_step(model, batch, optimizer=None, rng=None):
    """
    One training step on a task-pure batch.

    The loss back-propagates through the batch's head and the shared
    encoder; only those parameters are updated. Other heads are not part of
    the graph and stay untouched.

    Returns
    -------
    float
        The batch's mean cross-entropy before the update.
    """
    optimizer = model.optimizer if optimizer is None else optimizer
    rng = model.rng if rng is None else rng
    probabilities = forward_task(model, batch, training=True, rng=rng)
    loss = cross_entropy(probabilities, batch.labels)
    loss.backward()
    adam_step(model.step_parameters(batch.task), optimizer)
    return loss.item()


def predict_batches(model, task, examples, batch_size=64):
    "Probabilities for encoded examples in input order, as an [N x C] array."
    loader = TaskDataLoader(task, examples, batch_size=batch_size, shuffle=False)
    chunks = [forward_task(model, batch).data for batch in loader.iter_epoch(0)]
    if not chunks:
        return np.zeros((0, model.tasks[task].num_classes), dtype=FLOAT)
    return np.concatenate(chunks)


def evaluate(model, task, examples, model_label="", batch_size=64):
    "Score ``model`` on encoded ``examples`` of ``task``; returns an EvalReport."
    spec = model.tasks[task]
    probabilities = predict_batches(model, task, examples, batch_size)
    y_pred = probabilities.argmax(axis=1)
    y_true = np.array([example.label for example in examples], dtype=np.int64)
    cm = confusion(y_true, y_pred, spec.num_classes, spec.label_names)
    return scores(cm, task=task, model=model_label)


@dataclass
class TrainLog:
    records: list = field(default_factory=list)
    best_epoch: int = None
    best_score: float = None

    def losses(self, task):
        return [
            record["loss"]
            for record in self.records
            if record["task"] == task and record.get("loss") is not None
        ]

    def tasks(self):
        return sorted({record["task"] for record in self.records if record.get("loss") is not None})

    def final(self, task):
        for record in self.records:
            if record["epoch"] == "final" and record["task"] == task:
                return record
        return None

    def lines(self):
        return [json.dumps(record, sort_keys=True) for record in self.records]


def _val_summary(report):
    summary = dict(report.metrics())
    summary["confusion"] = report.confusion.counts.tolist()
    return summary


def train(
    model,
    loaders,
    epochs,
    seed,
    mode="MTL",
    val_sets=None,
    main_task=None,
    sampler="proportional",
    model_label=None,
    log_file=None,
):
    """
    Joint (MTL) or single-task (STL) training.

    Parameters
    ----------
    model : MultitaskModel
    loaders : dict of str to TaskDataLoader
        In STL mode exactly one loader, for the main task.
    epochs : int
    seed : int
        Seeds the batch order and dropout.
    mode : {"MTL", "STL"}
    val_sets : dict of str to list of EncodedExample, optional
        Validation examples per task; the main task's macro-F1 selects the
        best epoch, whose parameters are restored at the end.
    log_file : file object, optional
        Receives each TrainLog record as a JSON line as soon as it exists.

    Returns
    -------
    TrainLog
    """
    mode = str(mode).upper()
    val_sets = val_sets or {}
    if mode not in MODES:
        raise ConfigError({"training.mode": f"must be MTL or STL, got {mode!r}"})
    if epochs < 0:
        raise ConfigError({"training.epochs": f"must not be negative, got {epochs}"})
    if not loaders:
        raise ConfigError({"tasks": "no task loaders to train on"})
    for task in loaders:
        if task not in model.heads:
            raise RegistryError(f"unknown task {task!r}")
    main_task = main_task or model.main_task()
    if mode == "STL":
        if len(loaders) != 1 or main_task not in loaders:
            raise ConfigError(
                {"training.mode": "STL trains exactly one task, the selected main task"}
            )
        stream = loaders[main_task].iter_epoch
    else:
        stream = MultitaskDataLoader(loaders, seed=seed, sampler=sampler).iter_epoch
    model_label = model_label or mode

    log = TrainLog()
    rng = np.random.default_rng(seed)
    best = None

    def emit(record):
        log.records.append(record)
        if log_file is not None:
            log_file.write(json.dumps(record, sort_keys=True) + "\n")
            log_file.flush()

    for epoch in range(1, epochs + 1):
        totals = defaultdict(float)
        counts = defaultdict(int)
        for batch in stream(epoch):
            totals[batch.task] += joint_step(model, batch, rng=rng)
            counts[batch.task] += 1

        reports = {
            task: evaluate(model, task, examples, model_label)
            for task, examples in val_sets.items()
            if examples
        }
        for task in loaders:
            emit(
                {
                    "epoch": epoch,
                    "task": task,
                    "loss": totals[task] / counts[task] if counts[task] else None,
                    "val": _val_summary(reports[task]) if task in reports else None,
                }
            )
        logger.info(
            "epoch %d/%d %s",
            epoch,
            epochs,
            " ".join(
                f"{task}: loss={totals[task] / max(counts[task], 1):.4f}" for task in loaders
            ),
        )

        if main_task in reports:
            score = reports[main_task].f1_macro
            if log.best_score is None or score > log.best_score:
                log.best_score = score
                log.best_epoch = epoch
                best = model.snapshot()

    if best is not None:
        model.restore(best)
        logger.info("restored epoch %d (%s macro-F1 %.4f)", log.best_epoch, main_task,
                    log.best_score)
    for task, examples in val_sets.items():
        if examples and task in model.heads:
            report = evaluate(model, task, examples, model_label)
            emit({"epoch": "final", "task": task, "loss": None, "val": _val_summary(report)})
    return log


def predict(model, task, texts, vocab=None, lexicon=None, batch_size=64):
    """
    Classify raw texts with one task head of a shared model.

    Hashtags segment against the bundled words plus the vocabulary unless a
    ``lexicon`` is given. Texts that are empty after preprocessing come back
    with ``rejected=True`` and no label. Ties resolve to the lowest class index.
    """
    if task not in model.heads:
        raise RegistryError(f"unknown task {task!r}")
    vocab = model.vocab if vocab is None else vocab
    lexicon = build_lexicon(vocab.words()) if lexicon is None else lexicon
    spec = model.tasks[task]
    max_len = model.encoder.config.max_seq_len

    predictions = [Prediction(text=text) for text in texts]
    kept = []
    encoded = []
    for i, text in enumerate(texts):
        clean = preprocess(text, lexicon)
        if not clean:
            predictions[i].rejected = True
            continue
        kept.append(i)
        encoded.append(encode_text(clean, vocab, max_len, label=0, task=task))

    if encoded:
        probabilities = predict_batches(model, task, encoded, batch_size)
        for i, row in zip(kept, probabilities):
            label = int(np.argmax(row))
            predictions[i].label = label
            predictions[i].label_name = spec.label_names[label]
            predictions[i].probabilities = row
    return predictions
