"""
Corpus ingestion, tweet normalisation, vocabulary and id encoding.
"""
import html
import logging
import math
import re
from collections import Counter
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import emoji
import numpy as np
import pandas as pd

from .errors import ConfigError, IngestionError, SchemaError, SplitError

logger = logging.getLogger(__name__)

PAD, UNK, CLS, SEP = 0, 1, 2, 3
RESERVED_TOKENS = ("[PAD]", "[UNK]", "[CLS]", "[SEP]")

DAVIDSON_CLASSES = {0: "hate", 1: "offensive", 2: "normal"}
EKMAN_LABELS = ("anger", "disgust", "fear", "joy", "surprise", "sadness", "neutral")

URL_RE = re.compile(r"(?:https?://|www\.)\S+")
EMAIL_RE = re.compile(r"[\w.+-]+@[\w-]+(?:\.[\w-]+)+")
MENTION_RE = re.compile(r"@\w+")
HASHTAG_RE = re.compile(r"#(\w+)")
ELONGATED_RE = re.compile(r"([^\W\d_])\1{2,}")
NON_WORD_RE = re.compile(r"[^\w\s]|_")

_LEXICON_PATH = Path(__file__).parent / "data" / "lexicon.txt"


@dataclass(frozen=True)
class Example:
    text: str
    label: int
    task: str


@dataclass
class EncodedExample:
    ids: np.ndarray
    attention_mask: np.ndarray
    label: int = None
    task: str = None


@lru_cache(maxsize=1)
def default_lexicon():
    with open(_LEXICON_PATH, encoding="utf-8") as file:
        words = [line.strip() for line in file]
    return frozenset(word for word in words if word and not word.startswith("#"))


def build_lexicon(extra_words=()):
    "The bundled word list, extended with e.g. the words of a vocabulary."
    extra = frozenset(word for word in extra_words if word not in RESERVED_TOKENS)
    return default_lexicon() | extra if extra else default_lexicon()


def corpus_lexicon(texts):
    """
    Segmentation lexicon for a training corpus.

    The bundled words plus every word the texts use outside hashtags, so
    "#lovewins" splits when "love" and "wins" occur as plain words.
    Hashtag bodies are left out; otherwise each body would match itself whole.
    """
    words = set()
    for text in texts:
        words.update(preprocess(HASHTAG_RE.sub(" ", text), min_tokens=1).split())
    return build_lexicon(words)


def shorten_elongation(word, lexicon=None):
    """
    Collapse runs of three or more identical letters.

    Runs collapse to one letter; when that spelling is unknown but the
    two-letter spelling is a known word, the latter wins
    ("yeeessss" -> "yes", "cooool" -> "cool").
    """
    if not ELONGATED_RE.search(word):
        return word
    lexicon = default_lexicon() if lexicon is None else lexicon
    single = ELONGATED_RE.sub(r"\1", word)
    if single in lexicon:
        return single
    double = ELONGATED_RE.sub(r"\1\1", word)
    if double in lexicon:
        return double
    return single


def segment_hashtag(body, lexicon=None):
    """
    Split a hashtag body into words by greedy longest match.

    Returns the body unchanged when some position matches no word.
    """
    lexicon = default_lexicon() if lexicon is None else lexicon
    longest = max((len(word) for word in lexicon), default=0)
    words = []
    start = 0
    while start < len(body):
        for end in range(min(len(body), start + longest), start, -1):
            if body[start:end] in lexicon:
                words.append(body[start:end])
                start = end
                break
        else:
            return body
    return " ".join(words)


def preprocess(text, lexicon=None, min_tokens=2):
    """
    Normalise one raw post.

    Order: HTML entities, lowercase, URLs and emails, mentions, hashtags,
    emojis, punctuation and unknown characters, elongations, then the length
    filter. Stop words are kept. Every removed span becomes a space so no new
    elongations can form, which keeps the function idempotent.

    Returns an empty string when fewer than ``min_tokens`` tokens remain.
    """
    lexicon = default_lexicon() if lexicon is None else lexicon
    text = html.unescape(text)
    text = text.lower()
    text = URL_RE.sub(" ", text)
    text = EMAIL_RE.sub(" ", text)
    text = MENTION_RE.sub(" ", text)
    text = HASHTAG_RE.sub(lambda m: f" {segment_hashtag(m.group(1), lexicon)} ", text)
    text = emoji.replace_emoji(text, replace=" ")
    text = NON_WORD_RE.sub(" ", text)

    tokens = [shorten_elongation(word, lexicon) for word in text.split()]
    if len(tokens) < min_tokens:
        return ""
    return " ".join(tokens)


class Vocabulary:
    """
    Bijective token <-> id map with the reserved ids PAD=0, UNK=1, CLS=2, SEP=3.
    """

    def __init__(self, tokens=(), min_frequency=1):
        tokens = list(tokens)
        if tokens[: len(RESERVED_TOKENS)] == list(RESERVED_TOKENS):
            tokens = tokens[len(RESERVED_TOKENS):]
        self.id_to_token = list(RESERVED_TOKENS) + tokens
        self.token_to_id = {token: i for i, token in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise IngestionError("vocabulary tokens must be unique")
        self.min_frequency = min_frequency

    def __len__(self):
        return len(self.id_to_token)

    def __contains__(self, token):
        return token in self.token_to_id

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.id_to_token == other.id_to_token

    def lookup(self, token):
        return self.token_to_id.get(token, UNK)

    def decode(self, ids):
        "Tokens of the non-reserved ids, in order."
        return [self.id_to_token[i] for i in ids if i >= len(RESERVED_TOKENS)]

    def words(self):
        return self.id_to_token[len(RESERVED_TOKENS):]


def build_vocab(corpus, min_frequency=1, max_size=None):
    """
    Build a vocabulary from preprocessed texts (strings or :class:`Example`).

    Tokens are ranked by frequency, ties broken lexicographically.
    ``max_size`` bounds the total size, reserved ids included.
    """
    counts = Counter()
    seen = 0
    for item in corpus:
        text = item.text if isinstance(item, Example) else item
        counts.update(text.split())
        seen += 1
    if not seen:
        raise IngestionError("cannot build a vocabulary from an empty corpus")

    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    tokens = [token for token, count in ranked if count >= min_frequency]
    if max_size is not None:
        tokens = tokens[: max(0, max_size - len(RESERVED_TOKENS))]
    logger.debug("vocabulary: %d of %d distinct tokens kept", len(tokens), len(counts))
    return Vocabulary(tokens, min_frequency=min_frequency)


def encode(text, vocab, max_seq_len, label=None, task=None):
    "CLS + token ids (UNK when unknown) + SEP, padded or truncated to max_seq_len."
    if max_seq_len < 3:
        raise ConfigError({"max_seq_len": f"must be at least 3, got {max_seq_len}"})
    tokens = text.split()[: max_seq_len - 2]
    ids = np.full(max_seq_len, PAD, dtype=np.int64)
    ids[0] = CLS
    ids[1: len(tokens) + 1] = [vocab.lookup(token) for token in tokens]
    ids[len(tokens) + 1] = SEP
    mask = (ids != PAD).astype(np.int8)
    return EncodedExample(ids=ids, attention_mask=mask, label=label, task=task)


def encode_examples(examples, vocab, max_seq_len):
    return [
        encode(example.text, vocab, max_seq_len, label=example.label, task=example.task)
        for example in examples
    ]


def parse_label(value, label_names):
    """
    Map a raw label cell to a class index, or None when it is not recognised.

    Accepts a label name or an integer index. Multi-label cells
    ("joy,surprise") reduce to the first listed label.
    """
    value = str(value).strip()
    if "," in value:
        value = value.split(",")[0].strip()
    if value in label_names:
        return label_names.index(value)
    if value.lstrip("-").isdigit():
        index = int(value)
        if 0 <= index < len(label_names):
            return index
    return None


def read_table(path, columns):
    "Read a CSV as strings, requiring ``columns``."
    path = Path(path)
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except (UnicodeDecodeError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise OSError(f"cannot read {path}: {exc}") from exc

    missing = [col for col in columns if col not in df.columns]
    if missing:
        raise SchemaError(
            f"{path.name}: missing column(s) {', '.join(missing)}; "
            f"found {', '.join(df.columns)}"
        )
    return df


def load_csv(
    path,
    text_column,
    label_column,
    label_names,
    task,
    lexicon=None,
    rejects_dir=None,
):
    """
    Read a labelled CSV into :class:`Example` objects.

    Texts are preprocessed; rows with an unknown label or with nothing left
    after preprocessing are rejected.

    Returns
    -------
    examples : list of Example
    rejects : list of (row number, reason)
    """
    path = Path(path)
    label_names = list(label_names)
    df = read_table(path, (text_column, label_column))

    examples = []
    rejects = []
    for row_number, (raw_text, raw_label) in enumerate(
        zip(df[text_column], df[label_column]), start=2
    ):
        label = parse_label(raw_label, label_names)
        if label is None:
            rejects.append((row_number, f"unknown label {raw_label!r}"))
            continue
        text = preprocess(raw_text, lexicon)
        if not text:
            rejects.append((row_number, "empty after preprocessing"))
            continue
        examples.append(Example(text=text, label=label, task=task))

    if rejects:
        logger.warning("%s: rejected %d of %d rows", path.name, len(rejects), len(df))
        if rejects_dir is not None:
            name = f"{task.lower()}.{path.stem}.rejects.txt"
            write_rejects(rejects, Path(rejects_dir) / name)
    logger.info("%s: %d examples for task %s", path.name, len(examples), task)
    return examples, rejects


def write_rejects(rejects, path):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as file:
        for row_number, reason in rejects:
            file.write(f"row {row_number}: {reason}\n")


def write_examples_csv(examples, label_names, path, text_column="text", label_column="label"):
    "Write preprocessed examples back out with label names."
    df = pd.DataFrame(
        {
            text_column: [example.text for example in examples],
            label_column: [label_names[example.label] for example in examples],
        }
    )
    df.to_csv(path, index=False)


def split_train_val(examples, train_fraction=0.8, seed=0, stratified=True):
    """
    Partition examples into train and validation sets.

    The train side receives ``floor(train_fraction * n)`` examples. When
    stratified, each class contributes ``floor(train_fraction * n_c)`` and the
    rounding remainder goes to train, one example per class, largest
    fractional part first. A class never gives up its last validation
    example, so a stratified train side can fall short of the target: three
    classes of two examples at 0.8 split 3/3. Both sides keep the input order.
    """
    examples = list(examples)
    n = len(examples)
    if not 0.0 < train_fraction < 1.0:
        raise SplitError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    if n < 2:
        raise SplitError(f"need at least 2 examples to split, got {n}")

    rng = np.random.default_rng(seed)
    target = math.floor(train_fraction * n + 1e-9)

    if not stratified:
        chosen = set(rng.permutation(n)[:target].tolist())
    else:
        by_class = {}
        for i, example in enumerate(examples):
            by_class.setdefault(example.label, []).append(i)
        for label, members in sorted(by_class.items()):
            if len(members) < 2:
                raise SplitError(
                    f"class {label} has {len(members)} example(s); stratification needs 2"
                )

        quota = {}
        fraction = {}
        for label, members in by_class.items():
            exact = train_fraction * len(members)
            quota[label] = math.floor(exact + 1e-9)
            fraction[label] = exact - quota[label]
        remainder = target - sum(quota.values())
        for label in sorted(by_class, key=lambda lbl: (-fraction[lbl], lbl)):
            if remainder <= 0:
                break
            if len(by_class[label]) - quota[label] > 1:
                quota[label] += 1
                remainder -= 1

        chosen = set()
        for label in sorted(by_class):
            members = np.asarray(by_class[label])
            picked = rng.permutation(members)[: quota[label]]
            chosen.update(picked.tolist())

    train = [example for i, example in enumerate(examples) if i in chosen]
    val = [example for i, example in enumerate(examples) if i not in chosen]
    return train, val


def label_distribution(examples, label_names):
    "Class counts and shares as a DataFrame indexed by label name."
    counts = Counter(example.label for example in examples)
    total = sum(counts.values())
    df = pd.DataFrame(
        {
            "label": list(label_names),
            "count": [counts.get(i, 0) for i in range(len(label_names))],
        }
    )
    df["share"] = df["count"] / total if total else 0.0
    return df.set_index("label")


def derive_binary_corpora(path, text_column="tweet", class_column="class", out_dir=None):
    """
    Split the three-class Davidson corpus into its two binary corpora.

    ``HATE`` keeps hate-speech and neither rows (labels hate / normal);
    ``OFF`` keeps offensive and neither rows (labels offensive / normal).

    Returns
    -------
    dict of str to pandas.DataFrame
        Frames with ``text`` and ``label`` columns, also written to
        ``out_dir/davidson_hate.csv`` and ``out_dir/davidson_off.csv`` when
        ``out_dir`` is given.

    Raises
    ------
    SchemaError
        A column is missing or a class is not 0, 1 or 2.
    """
    df = read_table(path, (text_column, class_column))
    classes = pd.to_numeric(df[class_column], errors="coerce")
    bad = ~classes.isin(list(DAVIDSON_CLASSES))
    if bad.any():
        row = int(bad.to_numpy().argmax()) + 2
        raise SchemaError(
            f"{Path(path).name}: row {row}: class must be 0, 1 or 2, "
            f"got {df[class_column].iloc[row - 2]!r}"
        )
    names = classes.astype(int).map(DAVIDSON_CLASSES)
    frame = pd.DataFrame({"text": df[text_column], "label": names})
    corpora = {
        "HATE": frame[frame["label"].isin(["hate", "normal"])].reset_index(drop=True),
        "OFF": frame[frame["label"].isin(["offensive", "normal"])].reset_index(drop=True),
    }
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        for key, corpus in corpora.items():
            corpus.to_csv(out_dir / f"davidson_{key.lower()}.csv", index=False)
    for key, corpus in corpora.items():
        logger.info("Davidson-%s: %d rows", key, len(corpus))
    return corpora
