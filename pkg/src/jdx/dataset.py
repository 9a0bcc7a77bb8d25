"""Synthetic stand-in corpus: procedural mass images plus annotated sentences.

Each sample is a 64x64 grayscale region of interest showing one bright mass
whose boundary realizes a margin category (edge treatment) and a shape
category (radial profile), over textured background.  Three reference
sentences per sample are instantiated from a shared template bank; every
sentence carries at least one margin synonym and one shape synonym and never
a raw lexicon category name.  Sampling is Zipf-weighted so frequent template
and synonym choices repeat across the corpus, which is what makes verbatim
sentence duplication by a captioning model measurable.

All randomness flows through per-sample spawns of one seeded stream, so a
dataset is a pure function of (count, seed, fractions).
"""

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .imageutil import bilinear_resize, read_pgm, write_pgm
from .rng import Rng

IMAGE_SIZE = 64

MARGIN_CLASSES = ["circumscribed", "microlobulated", "obscured", "indistinct", "spiculated"]
SHAPE_CLASSES = ["round", "oval", "lobulated", "irregular"]

# synonym phrases standing in for the lexicon terms; 5-12 entries per
# category, entries disjoint across all nine lists, category names excluded
MARGIN_WORDS = {
    "circumscribed": ["well defined", "sharply outlined", "cleanly drawn", "crisp", "neat rimmed"],
    "microlobulated": ["finely scalloped", "ripple bordered", "subtly undulating", "pebbly",
                       "minutely notched"],
    "obscured": ["partly hidden", "veiled", "tissue covered", "half masked", "shadowed over"],
    "indistinct": ["blurry", "hazy", "faintly traced", "smudged", "poorly separable"],
    "spiculated": ["starburst", "needle fringed", "spiky", "thorn edged", "ray streaked"],
}
SHAPE_WORDS = {
    "round": ["circular", "coin like", "ball bodied", "evenly curved", "ring symmetric"],
    "oval": ["egg contoured", "elliptical", "oblong", "gently elongated", "almond formed"],
    "lobulated": ["bulging lobed", "clover leafed", "petal arced", "knobby", "billowy"],
    "irregular": ["asymmetric", "jagged", "haphazard", "randomly angled", "formless looking"],
}

# shared sentence bank; {m}=margin synonym, {s}=shape synonym, {d}=detail
TEMPLATES = [
    "the scan shows a {s} mass with {m} borders and {d} texture",
    "a {s} lesion with {m} edges stands out against {d} tissue",
    "this region contains a {s} density whose rim appears {m} and {d}",
    "one can see a {s} opacity bounded by {m} margins over {d} background",
    "the image reveals a {s} focus with {m} outlines and {d} shading",
    "a {s} nodule having {m} boundaries sits within {d} surroundings",
    "here the mass looks {s} overall while its border seems {m} and {d}",
    "observe a {s} area whose {m} edge meets {d} tissue nearby",
    "the picture presents a {s} spot with {m} contours amid {d} noise",
    "a fairly {s} growth with {m} perimeter appears over {d} parenchyma",
]
TEMPLATE_WEIGHTS = [0.16, 0.14, 0.12, 0.11, 0.10, 0.10, 0.08, 0.07, 0.06, 0.06]

DETAILS = ["grainy", "mildly speckled", "dense", "uneven", "low contrast",
           "soft glowing", "coarse", "dim mottled"]
DETAIL_WEIGHTS = [0.20, 0.16, 0.14, 0.12, 0.11, 0.10, 0.09, 0.08]
SYNONYM_WEIGHTS = [0.34, 0.24, 0.17, 0.14, 0.11]

# appearance determines malignancy: ragged or washed-out margins, or a
# jagged outline, read as malignant (10% of recorded labels are then flipped)
MALIGNANT_MARGINS = {"indistinct", "spiculated"}
MALIGNANT_SHAPES = {"irregular"}

BENIGN_PAIRS = [(m, s) for m in ["circumscribed", "microlobulated", "obscured"]
                for s in ["round", "oval", "lobulated"]]
MALIGNANT_PAIRS = [(m, s) for m in MARGIN_CLASSES for s in SHAPE_CLASSES
                   if m in MALIGNANT_MARGINS or s in MALIGNANT_SHAPES]


@dataclass(frozen=True)
class LexiconLabels:
    margin_class: int
    shape_class: int

    @property
    def margin(self):
        return MARGIN_CLASSES[self.margin_class]

    @property
    def shape(self):
        return SHAPE_CLASSES[self.shape_class]


@dataclass(frozen=True)
class RoiSample:
    image: np.ndarray          # (64,64) float64 in [0,1]
    diagnosis: str             # "benign" | "malignant"
    labels: LexiconLabels
    references: tuple          # 3 sentence strings


def appearance_is_malignant(margin, shape):
    return margin in MALIGNANT_MARGINS or shape in MALIGNANT_SHAPES


def _wrap_angle(a):
    return (a + np.pi) % (2.0 * np.pi) - np.pi


def render_roi(margin, shape, rng):
    """Draw one mass image for the given category pair."""
    h = w = IMAGE_SIZE
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    cy = h / 2.0 + rng.uniform(-4.0, 4.0)
    cx = w / 2.0 + rng.uniform(-4.0, 4.0)
    dy, dx = yy - cy, xx - cx
    dist = np.hypot(dy, dx)
    theta = np.arctan2(dy, dx)

    r0 = rng.uniform(11.0, 15.0)
    if shape == "round":
        radius = r0 * (1.0 + 0.02 * np.cos(theta - rng.uniform(0, 2 * np.pi)))
    elif shape == "oval":
        phi = rng.uniform(0, np.pi)
        aspect = rng.uniform(1.4, 1.75)
        a, b = r0 * np.sqrt(aspect), r0 / np.sqrt(aspect)
        radius = a * b / np.hypot(b * np.cos(theta - phi), a * np.sin(theta - phi))
    elif shape == "lobulated":
        k = 3 + rng.randint(3)
        radius = r0 * (1.0 + rng.uniform(0.15, 0.22) * np.cos(k * theta - rng.uniform(0, 2 * np.pi)))
    else:  # irregular
        radius = np.full_like(theta, r0)
        for k in range(2, 8):
            radius += r0 * rng.uniform(0.03, 0.09) * np.cos(k * theta - rng.uniform(0, 2 * np.pi))

    if margin == "microlobulated":
        radius = radius + r0 * 0.05 * np.cos(14 * theta - rng.uniform(0, 2 * np.pi))

    edge_width = {"circumscribed": 0.7, "microlobulated": 0.8, "obscured": 1.1,
                  "indistinct": 4.5, "spiculated": 1.0}[margin]
    inside = 1.0 / (1.0 + np.exp(-(radius - dist) / edge_width))

    if margin == "spiculated":
        n_spikes = 9 + rng.randint(5)
        angles = np.sort(rng.fill_uniform(n_spikes) * 2 * np.pi - np.pi)
        dtheta = np.abs(_wrap_angle(theta[..., None] - angles[None, None, :])).min(axis=-1)
        length = r0 * rng.uniform(0.55, 0.8)
        radial = np.clip(1.0 - (dist - radius) / length, 0.0, 1.0) * (dist > 0.75 * radius)
        spikes = np.exp(-(dtheta / 0.055) ** 2) * radial
        inside = np.maximum(inside, 0.85 * spikes)

    base = 0.14 + 0.05 * rng.uniform()
    img = np.full((h, w), base)
    for _ in range(3):  # smooth background clutter
        by, bx = rng.uniform(0, h), rng.uniform(0, w)
        amp, sig = rng.uniform(0.03, 0.09), rng.uniform(9.0, 18.0)
        img += amp * np.exp(-((yy - by) ** 2 + (xx - bx) ** 2) / (2 * sig * sig))
    img += 0.05 * (rng.fill_uniform((h, w)) - 0.5)

    interior = rng.uniform(0.66, 0.78)
    img = img + inside * (interior - img) * rng.uniform(0.92, 1.0)

    if margin == "obscured":
        phi = rng.uniform(0, 2 * np.pi)
        proj = dx * np.cos(phi) + dy * np.sin(phi)
        veil = 0.30 / (1.0 + np.exp(-(proj - rng.uniform(-2.0, 4.0)) / 2.5))
        img = img + veil * (0.9 - img)

    return np.clip(img, 0.0, 1.0)


def _fix_articles(sentence):
    words = sentence.split()
    for i in range(len(words) - 1):
        if words[i] == "a" and words[i + 1][0] in "aeiou":
            words[i] = "an"
    return " ".join(words)


def make_sentence(margin, shape, rng):
    template = rng.choice(TEMPLATES, TEMPLATE_WEIGHTS)
    m = rng.choice(MARGIN_WORDS[margin], SYNONYM_WEIGHTS[:len(MARGIN_WORDS[margin])])
    s = rng.choice(SHAPE_WORDS[shape], SYNONYM_WEIGHTS[:len(SHAPE_WORDS[shape])])
    d = rng.choice(DETAILS, DETAIL_WEIGHTS)
    return _fix_articles(template.format(m=m, s=s, d=d))


def synthesize_sample(index, margin, shape, diagnosis, rng):
    img = render_roi(margin, shape, rng.spawn("image"))
    sent_rng = rng.spawn("sentences")
    refs = tuple(make_sentence(margin, shape, sent_rng) for _ in range(3))
    labels = LexiconLabels(MARGIN_CLASSES.index(margin), SHAPE_CLASSES.index(shape))
    return RoiSample(image=img, diagnosis=diagnosis, labels=labels, references=refs)


def synthesize_dataset(count, seed, benign_fraction=0.5, label_noise=0.1):
    """Generate `count` samples; deterministic for a given argument tuple."""
    if count <= 0:
        raise ValueError("count must be positive")
    if not 0.0 < benign_fraction < 1.0:
        raise ValueError("benign_fraction must lie in (0,1)")
    master = Rng(seed)
    samples = []
    for i in range(count):
        rng = master.spawn(f"sample/{i}")
        benign = rng.uniform() < benign_fraction
        margin, shape = rng.choice(BENIGN_PAIRS if benign else MALIGNANT_PAIRS)
        diagnosis = "malignant" if appearance_is_malignant(margin, shape) else "benign"
        if label_noise > 0.0 and rng.uniform() < label_noise:
            diagnosis = "benign" if diagnosis == "malignant" else "malignant"
        samples.append(synthesize_sample(i, margin, shape, diagnosis, rng))
    return samples


def split(samples, train_fraction, seed):
    """Deterministic shuffle-and-slice; train gets round(n * fraction)."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie in (0,1)")
    order = list(range(len(samples)))
    Rng(seed).spawn("split").shuffle(order)
    n_train = int(len(samples) * train_fraction + 0.5)
    train = [samples[i] for i in order[:n_train]]
    test = [samples[i] for i in order[n_train:]]
    return train, test


# ---------------------------------------------------------------------------
# augmentation: 2 crop sizes x 5 locations x 2 flips x 4 rotations = 80

CROP_SIZES = (56, 48)
CROP_LOCATIONS = ("top-left", "top-right", "center", "bottom-left", "bottom-right")


def _crop_origin(location, size):
    lo = IMAGE_SIZE - size
    mid = lo // 2
    return {"top-left": (0, 0), "top-right": (0, lo), "center": (mid, mid),
            "bottom-left": (lo, 0), "bottom-right": (lo, lo)}[location]


def augment(sample):
    """All 80 geometric variants, labels and references copied unchanged."""
    variants = []
    for size in CROP_SIZES:
        for location in CROP_LOCATIONS:
            y0, x0 = _crop_origin(location, size)
            crop = sample.image[y0:y0 + size, x0:x0 + size]
            resized = bilinear_resize(crop, IMAGE_SIZE, IMAGE_SIZE)
            for flip in (False, True):
                flipped = resized[:, ::-1] if flip else resized
                for rot in range(4):
                    img = np.ascontiguousarray(np.rot90(flipped, k=rot))
                    variants.append(replace(sample, image=img))
    return variants


def random_variant(sample, rng):
    """One draw from the same 80-variant family, for per-epoch augmentation."""
    size = CROP_SIZES[rng.randint(len(CROP_SIZES))]
    location = CROP_LOCATIONS[rng.randint(len(CROP_LOCATIONS))]
    y0, x0 = _crop_origin(location, size)
    img = bilinear_resize(sample.image[y0:y0 + size, x0:x0 + size], IMAGE_SIZE, IMAGE_SIZE)
    if rng.randint(2):
        img = img[:, ::-1]
    img = np.ascontiguousarray(np.rot90(img, k=rng.randint(4)))
    return replace(sample, image=img)


# ---------------------------------------------------------------------------
# vocabulary and token sequences

PAD, BOS, EOS, UNK = 0, 1, 2, 3
RESERVED_TOKENS = ["<pad>", "<bos>", "<eos>", "<unk>"]


def tokenize(text):
    """Lowercase, strip punctuation, split on whitespace."""
    cleaned = "".join(c if c.isalnum() or c == "'" else " " for c in text.lower())
    return cleaned.split()


@dataclass(frozen=True)
class TokenSequence:
    """Token indices with BOS prepended and EOS terminating."""

    ids: tuple

    def __post_init__(self):
        if len(self.ids) < 2 or self.ids[0] != BOS or self.ids[-1] != EOS:
            raise ValueError("token sequence must start with BOS and end with EOS")

    @property
    def word_ids(self):
        return self.ids[1:-1]

    @property
    def target_ids(self):
        """Prediction targets: the words followed by EOS."""
        return self.ids[1:]

    def __len__(self):
        return len(self.ids)


class Vocabulary:
    """Bidirectional token map with reserved PAD/BOS/EOS/UNK slots."""

    def __init__(self, tokens):
        self.index_to_token = list(RESERVED_TOKENS) + list(tokens)
        self.token_to_index = {t: i for i, t in enumerate(self.index_to_token)}
        if len(self.token_to_index) != len(self.index_to_token):
            raise ValueError("duplicate tokens in vocabulary")

    def __len__(self):
        return len(self.index_to_token)

    @classmethod
    def from_corpus(cls, sentences):
        """Non-reserved tokens ordered by first occurrence in the corpus."""
        if not sentences:
            raise ValueError("empty corpus")
        seen = {}
        for sentence in sentences:
            for tok in tokenize(sentence):
                if tok not in seen:
                    seen[tok] = len(seen)
        return cls(seen.keys())

    def lookup(self, token):
        return self.token_to_index.get(token, UNK)

    def encode(self, text, max_len=None):
        words = tokenize(text) if isinstance(text, str) else list(text)
        ids = [BOS] + [self.lookup(w) for w in words] + [EOS]
        if max_len is not None and len(ids) > max_len:
            raise ValueError(f"sentence of {len(ids)} tokens exceeds max_len {max_len}")
        return TokenSequence(tuple(ids))

    def decode(self, ids):
        """Space-joined words; PAD/BOS/EOS stripped, UNK rendered literally."""
        specials = {PAD, BOS, EOS}
        return " ".join(self.index_to_token[i] for i in ids if i not in specials)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for tok in self.index_to_token:
                fh.write(tok + "\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            tokens = [line.rstrip("\n") for line in fh if line.rstrip("\n")]
        if tokens[:4] != RESERVED_TOKENS:
            raise ValueError(f"{path}: vocabulary file missing reserved tokens")
        return cls(tokens[4:])


def build_vocabulary(references):
    return Vocabulary.from_corpus(references)


# ---------------------------------------------------------------------------
# on-disk layout: <root>/<split>/sample_NNNNN/{image.pgm, meta.tsv, refs.txt}

def save_samples(directory, samples):
    directory.mkdir(parents=True, exist_ok=True)
    for i, sample in enumerate(samples):
        d = directory / f"sample_{i:05d}"
        d.mkdir(exist_ok=True)
        write_pgm(d / "image.pgm", sample.image)
        with open(d / "meta.tsv", "w", encoding="utf-8") as fh:
            fh.write(f"{sample.diagnosis}\t{sample.labels.margin}\t{sample.labels.shape}\n")
        with open(d / "refs.txt", "w", encoding="utf-8") as fh:
            for ref in sample.references:
                fh.write(ref + "\n")


def load_samples(directory):
    samples = []
    for d in sorted(p for p in directory.iterdir() if p.is_dir()):
        img = read_pgm(d / "image.pgm")
        with open(d / "meta.tsv", encoding="utf-8") as fh:
            diagnosis, margin, shape = fh.read().strip().split("\t")
        with open(d / "refs.txt", encoding="utf-8") as fh:
            refs = tuple(line.rstrip("\n") for line in fh if line.strip())
        labels = LexiconLabels(MARGIN_CLASSES.index(margin), SHAPE_CLASSES.index(shape))
        samples.append(RoiSample(image=img, diagnosis=diagnosis, labels=labels, references=refs))
    return samples


def save_dataset(root, train, test, vocabulary=None):
    """Write the two-split tree plus the vocabulary built from train refs."""
    root = Path(root)
    save_samples(root / "train", train)
    save_samples(root / "test", test)
    if vocabulary is None:
        vocabulary = build_vocabulary([r for s in train for r in s.references])
    vocabulary.save(root / "vocab.txt")
    return vocabulary


def load_dataset(root):
    """Read back a saved tree; returns (train, test, vocabulary)."""
    root = Path(root)
    for needed in ("train", "test"):
        if not (root / needed).is_dir():
            raise FileNotFoundError(f"{root}: missing '{needed}' split directory")
    train = load_samples(root / "train")
    test = load_samples(root / "test")
    vocabulary = Vocabulary.load(root / "vocab.txt")
    return train, test, vocabulary
