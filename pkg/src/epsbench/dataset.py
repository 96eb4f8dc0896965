"""Dataset schema, vote ingestion and validation, statistics, synthesis.

A dataset lives in a directory: a versioned manifest.json, a line-delimited
vote log, and images laid out as images/<id>/source.png plus candidate
grids images/<id>/m<m>_p<p>.png for methods 1..7 and settings 1..8.

The synthetic generator stands in for the human-built corpus: piecewise-
constant sources with additive detail noise, a 7x8 candidate grid produced
by labeled stand-in smoothers of monotonically increasing strength, and
seeded simulated votes. Everything is a pure function of the spec and seed.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .groundtruth import GroundTruthSet
from .metrics import N_METHODS, N_PARAMS, VoteTally, select_top5
from .rasters import load_image, png_dims, save_image

SCHEMA_VERSION = 1
FULL_TRAIN = 400
FULL_TEST = 100


class DatasetValidationError(ValueError):
    """Validation failure; the message names the offending image or record."""


@dataclass(frozen=True)
class VoteRecord:
    image_id: str
    volunteer: str
    method: int
    param: int
    timestamp: str = ""

    @property
    def t(self) -> str:
        return self.image_id


@dataclass
class ImageEntry:
    id: str
    split: str  # train | test
    source: str
    candidates: dict[str, str]  # "m<m>_p<p>" -> relative path


@dataclass
class DatasetManifest:
    schema_version: int = SCHEMA_VERSION
    mode: str = "synthetic"  # synthetic | full
    votes_per_image: int = 14
    vote_log: str = "votes.jsonl"
    images: list[ImageEntry] = field(default_factory=list)

    def save(self, path) -> None:
        doc = {
            "schema_version": self.schema_version,
            "mode": self.mode,
            "votes_per_image": self.votes_per_image,
            "vote_log": self.vote_log,
            "images": [asdict(e) for e in self.images],
        }
        Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        doc = json.loads(Path(path).read_text())
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise DatasetValidationError(
                f"manifest schema version {doc.get('schema_version')} unsupported")
        return cls(
            schema_version=doc["schema_version"],
            mode=doc["mode"],
            votes_per_image=doc["votes_per_image"],
            vote_log=doc["vote_log"],
            images=[ImageEntry(**e) for e in doc["images"]],
        )


def candidate_key(m: int, p: int) -> str:
    return f"m{m}_p{p}"


def read_vote_log(path) -> list[VoteRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                d = json.loads(line)
                records.append(VoteRecord(
                    image_id=d["image_id"], volunteer=d["volunteer"],
                    method=int(d["method"]), param=int(d["param"]),
                    timestamp=d.get("timestamp", "")))
            except (json.JSONDecodeError, KeyError) as e:
                raise DatasetValidationError(f"{path}:{lineno}: bad vote record ({e})")
    return records


def append_vote(path, record: VoteRecord) -> None:
    """Append one record to the line-delimited vote log (flush before return)."""
    line = json.dumps({
        "image_id": record.image_id, "volunteer": record.volunteer,
        "method": record.method, "param": record.param,
        "timestamp": record.timestamp}, sort_keys=True)
    with open(path, "a", encoding="utf-8") as f:
        f.write(line + "\n")
        f.flush()


# ---------------------------------------------------------------------------


class Dataset:
    """Validated dataset: manifest, vote tally, lazy image access."""

    def __init__(self, root: Path, manifest: DatasetManifest,
                 records: list[VoteRecord], tally: VoteTally):
        self.root = Path(root)
        self.manifest = manifest
        self.records = records
        self.tally = tally
        self.entries = {e.id: e for e in manifest.images}
        self._images: dict[str, np.ndarray] = {}
        self._gts: dict[str, GroundTruthSet] = {}

    def split_ids(self, split: Optional[str] = None) -> list[str]:
        if split is None:
            return [e.id for e in self.manifest.images]
        return [e.id for e in self.manifest.images if e.split == split]

    def _load(self, rel: str) -> np.ndarray:
        if rel not in self._images:
            self._images[rel] = load_image(self.root / rel)
        return self._images[rel]

    def source(self, t: str) -> np.ndarray:
        return self._load(self.entries[t].source)

    def candidate(self, t: str, m: int, p: int) -> np.ndarray:
        return self._load(self.entries[t].candidates[candidate_key(m, p)])

    def groundtruth_set(self, t: str) -> GroundTruthSet:
        if t not in self._gts:
            self._gts[t] = select_top5(self.tally, t,
                                       lambda m, p: self.candidate(t, m, p))
        return self._gts[t]

    def groundtruth_sets(self, split: Optional[str] = None) -> dict[str, GroundTruthSet]:
        return {t: self.groundtruth_set(t) for t in self.split_ids(split)}

    def selections(self, t: str) -> list[np.ndarray]:
        """The voted candidate image for each vote record of image t (with repeats)."""
        return [self.candidate(t, r.method, r.param)
                for r in self.records if r.image_id == t]

    def candidate_grid(self, split: Optional[str] = None,
                       methods: Iterable[int] = range(1, N_METHODS + 1)):
        """method name -> setting -> image id -> candidate image (for grid search)."""
        ids = self.split_ids(split)
        return {f"m{m}": {p: {t: self.candidate(t, m, p) for t in ids}
                          for p in range(1, N_PARAMS + 1)}
                for m in methods}


def load_and_validate(manifest_path) -> Dataset:
    """Load a dataset and enforce every schema invariant.

    Checks: file existence, decodable dimensions matching the source, vote
    ranges, one vote per (image, volunteer), per-image vote counts, and the
    400/100 split in full mode. Errors name the offending image or record.
    """
    manifest_path = Path(manifest_path)
    root = manifest_path.parent
    manifest = DatasetManifest.load(manifest_path)

    ids = set()
    for e in manifest.images:
        if e.id in ids:
            raise DatasetValidationError(f"duplicate image id {e.id!r}")
        ids.add(e.id)
        if e.split not in ("train", "test"):
            raise DatasetValidationError(f"image {e.id!r} has bad split {e.split!r}")
        src = root / e.source
        if not src.exists():
            raise DatasetValidationError(f"image {e.id!r}: missing source {e.source}")
        dims = png_dims(src)
        for m in range(1, N_METHODS + 1):
            for p in range(1, N_PARAMS + 1):
                key = candidate_key(m, p)
                if key not in e.candidates:
                    raise DatasetValidationError(
                        f"image {e.id!r}: missing candidate entry {key}")
                cand = root / e.candidates[key]
                if not cand.exists():
                    raise DatasetValidationError(
                        f"image {e.id!r}: missing candidate file {e.candidates[key]}")
                cdims = png_dims(cand)
                if cdims != dims:
                    raise DatasetValidationError(
                        f"image {e.id!r}: candidate {key} has dimensions "
                        f"{cdims}, source has {dims}")

    if manifest.mode == "full":
        n_train = sum(1 for e in manifest.images if e.split == "train")
        n_test = sum(1 for e in manifest.images if e.split == "test")
        if (n_train, n_test) != (FULL_TRAIN, FULL_TEST):
            raise DatasetValidationError(
                f"full mode requires {FULL_TRAIN} train / {FULL_TEST} test images, "
                f"got {n_train}/{n_test}")
        if manifest.votes_per_image != 14:
            raise DatasetValidationError("full mode requires 14 votes per image")

    log_path = root / manifest.vote_log
    records = read_vote_log(log_path) if log_path.exists() else []
    seen_pairs = set()
    per_image = {t: 0 for t in ids}
    for r in records:
        if r.image_id not in ids:
            raise DatasetValidationError(f"vote for unknown image {r.image_id!r}")
        if not (1 <= r.method <= N_METHODS and 1 <= r.param <= N_PARAMS):
            raise DatasetValidationError(
                f"vote for image {r.image_id!r} has out-of-range "
                f"(method, param) = ({r.method}, {r.param})")
        pair = (r.image_id, r.volunteer)
        if pair in seen_pairs:
            raise DatasetValidationError(
                f"volunteer {r.volunteer!r} voted twice on image {r.image_id!r}")
        seen_pairs.add(pair)
        per_image[r.image_id] += 1
    for t, n in sorted(per_image.items()):
        if n != manifest.votes_per_image:
            raise DatasetValidationError(
                f"image {t!r} has {n} votes, expected {manifest.votes_per_image}")

    tally = VoteTally.from_records(records)
    for t in ids - set(tally.per_image):
        tally.per_image[t] = np.zeros((N_METHODS, N_PARAMS), dtype=np.int64)
    return Dataset(root, manifest, records, tally)


# ---------------------------------------------------------------------------
# Statistics


@dataclass
class VoteStatistics:
    per_method: np.ndarray          # (7,) total choices per method
    per_param: np.ndarray           # (7, 8) per method x setting
    max_repeat_hist: dict[int, int]  # max repeated choices -> image count
    n_images: int
    total_votes: int

    def top_method(self) -> tuple[int, int]:
        m = int(np.argmax(self.per_method))
        return m + 1, int(self.per_method[m])

    def images_with_max_repeat_at_least(self, k: int) -> int:
        return sum(n for rep, n in self.max_repeat_hist.items() if rep >= k)


def vote_statistics(dataset: Dataset) -> VoteStatistics:
    """Per-method totals, per-setting totals, and the max-repeat distribution."""
    per_param = dataset.tally.global_counts.astype(np.int64)
    per_method = per_param.sum(axis=1)
    hist: dict[int, int] = {}
    for t in dataset.tally.images():
        mx = int(dataset.tally.per_image[t].max())
        hist[mx] = hist.get(mx, 0) + 1
    return VoteStatistics(
        per_method=per_method,
        per_param=per_param,
        max_repeat_hist=dict(sorted(hist.items())),
        n_images=len(dataset.manifest.images),
        total_votes=len(dataset.records),
    )


# ---------------------------------------------------------------------------
# Synthetic generation


@dataclass(frozen=True)
class SynthSpec:
    n_train: int = 4
    n_test: int = 1
    height: int = 64
    width: int = 64
    seed: int = 0
    votes_per_image: int = 14
    vote_mode: str = "spread"  # spread | concentrated
    concentrated_target: tuple[int, int] = (6, 4)
    n_volunteers: int = 26
    noise_amplitude: float = 0.12
    n_plateaus: int = 3


# the shipped overfit fixture: 4 training images, single groundtruths
OVERFIT_FIXTURE = SynthSpec(n_train=4, n_test=1, seed=0,
                            vote_mode="concentrated", concentrated_target=(6, 4))


@dataclass
class SynthInfo:
    """Generator bookkeeping for tests: planted counts and clean sources."""

    vote_counts: dict[str, np.ndarray]
    clean: dict[str, np.ndarray]


def _separable(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Per-channel separable filtering with edge clamping."""
    r = len(kernel) // 2
    padded = np.pad(img, ((r, r), (0, 0), (0, 0)), mode="edge")
    tmp = np.zeros_like(img)
    for i, k in enumerate(kernel):
        tmp += k * padded[i:i + img.shape[0]]
    padded = np.pad(tmp, ((0, 0), (r, r), (0, 0)), mode="edge")
    out = np.zeros_like(img)
    for i, k in enumerate(kernel):
        out += k * padded[:, i:i + img.shape[1]]
    return out


def _box_kernel(radius: int) -> np.ndarray:
    return np.full(2 * radius + 1, 1.0 / (2 * radius + 1))


def _binomial_kernel(iters: int) -> np.ndarray:
    k = np.array([1.0])
    for _ in range(iters):
        k = np.convolve(k, [0.25, 0.5, 0.25])
    return k


def _triangle_kernel(radius: int) -> np.ndarray:
    k = np.concatenate([np.arange(1, radius + 2), np.arange(radius, 0, -1)]).astype(float)
    return k / k.sum()


def _exp_kernel(radius: int, alpha: float) -> np.ndarray:
    k = np.exp(-alpha * np.abs(np.arange(-radius, radius + 1, dtype=float)))
    return k / k.sum()


def _gauss_kernel(sigma: float) -> np.ndarray:
    radius = max(1, int(np.ceil(3 * sigma)))
    x = np.arange(-radius, radius + 1, dtype=float)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _block_average(img: np.ndarray, block: int) -> np.ndarray:
    h, w, _ = img.shape
    out = img.copy()
    for y0 in range(0, h, block):
        for x0 in range(0, w, block):
            tile = img[y0:y0 + block, x0:x0 + block]
            out[y0:y0 + block, x0:x0 + block] = tile.mean(axis=(0, 1))
    return out


def standin_smoother(img: np.ndarray, method: int, param: int) -> np.ndarray:
    """Stand-ins for the seven benchmark filters: strength grows with param.

    Setting 1 barely smooths and setting 8 smooths fully (the kernel widens
    with the setting and a blend weight p/8 ramps the effect in), giving each
    method a coarse-to-fine ladder. These exercise the (method, parameter)
    grid and its downstream logic; they deliberately do not reproduce the
    real benchmark filters.
    """
    p = param
    if not 1 <= p <= 8:
        raise ValueError(f"param must be 1..8, got {p}")
    if method == 1:
        base = _separable(img, _box_kernel(p))
    elif method == 2:
        base = _separable(img, _binomial_kernel(2 * p))
    elif method == 3:
        base = _separable(img, _triangle_kernel(p))
    elif method == 4:
        base = _separable(img, _exp_kernel(2 * p, 2.0 / p))
    elif method == 5:
        r = (p + 1) // 2
        base = _separable(_separable(img, _box_kernel(r)), _box_kernel(r))
    elif method == 6:
        base = _separable(img, _gauss_kernel(0.5 * p))
    elif method == 7:
        base = _block_average(img, p + 1)
    else:
        raise ValueError(f"method must be 1..7, got {method}")
    w = p / 8.0
    return (1.0 - w) * img + w * base


def _mosaic(rng: np.random.Generator, h: int, w: int, n_plateaus: int) -> np.ndarray:
    """Piecewise-constant image: nearest-seed plateaus with random colors."""
    seeds_y = rng.uniform(0, h, n_plateaus)
    seeds_x = rng.uniform(0, w, n_plateaus)
    colors = rng.uniform(0.1, 0.9, (n_plateaus, 3))
    yy, xx = np.mgrid[0:h, 0:w]
    d = (yy[..., None] - seeds_y) ** 2 + (xx[..., None] - seeds_x) ** 2
    labels = np.argmin(d, axis=2)
    return colors[labels]


def _plant_votes(rng: np.random.Generator, spec: SynthSpec) -> np.ndarray:
    if spec.vote_mode == "concentrated":
        counts = np.zeros((N_METHODS, N_PARAMS), dtype=np.int64)
        m, p = spec.concentrated_target
        counts[m - 1, p - 1] = spec.votes_per_image
        return counts
    if spec.vote_mode != "spread":
        raise ValueError(f"unknown vote mode {spec.vote_mode!r}")
    method_pref = rng.dirichlet(np.full(N_METHODS, 0.4))
    param_pref = rng.dirichlet(np.full(N_PARAMS, 0.8))
    probs = np.outer(method_pref, param_pref).reshape(-1)
    drawn = rng.multinomial(spec.votes_per_image, probs)
    return drawn.reshape(N_METHODS, N_PARAMS).astype(np.int64)


def synth_generate(spec: SynthSpec, out_dir) -> tuple[Path, SynthInfo]:
    """Generate a synthetic dataset directory; deterministic per spec+seed.

    Returns the manifest path and the generator's bookkeeping (planted vote
    counts per image and the clean plateau images, for tests).
    """
    if spec.votes_per_image > spec.n_volunteers:
        raise ValueError("votes_per_image cannot exceed n_volunteers")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    volunteers = [f"v{i + 1:02d}" for i in range(spec.n_volunteers)]
    n_total = spec.n_train + spec.n_test

    entries = []
    vote_counts: dict[str, np.ndarray] = {}
    clean: dict[str, np.ndarray] = {}
    vote_lines = []
    record_index = 0
    for i in range(n_total):
        t = f"img{i:04d}"
        split = "train" if i < spec.n_train else "test"
        img_dir = out / "images" / t
        img_dir.mkdir(parents=True, exist_ok=True)

        base = _mosaic(rng, spec.height, spec.width, spec.n_plateaus)
        noise = rng.uniform(-spec.noise_amplitude, spec.noise_amplitude,
                            base.shape)
        source = np.clip(base + noise, 0.0, 1.0)
        save_image(img_dir / "source.png", source)
        clean[t] = base
        # quantized source: candidates smooth exactly what validation sees
        source_q = np.round(source * 255.0) / 255.0

        candidates = {}
        for m in range(1, N_METHODS + 1):
            for p in range(1, N_PARAMS + 1):
                smoothed = np.clip(standin_smoother(source_q, m, p), 0.0, 1.0)
                rel = f"images/{t}/{candidate_key(m, p)}.png"
                save_image(out / rel, smoothed)
                candidates[candidate_key(m, p)] = rel

        counts = _plant_votes(rng, spec)
        vote_counts[t] = counts
        order = rng.permutation(spec.n_volunteers)[:spec.votes_per_image]
        slot = 0
        for m in range(1, N_METHODS + 1):
            for p in range(1, N_PARAMS + 1):
                for _ in range(int(counts[m - 1, p - 1])):
                    vote_lines.append(json.dumps({
                        "image_id": t,
                        "volunteer": volunteers[order[slot]],
                        "method": m,
                        "param": p,
                        "timestamp": f"2026-01-01T00:00:{record_index % 60:02d}Z",
                    }, sort_keys=True))
                    slot += 1
                    record_index += 1
        entries.append(ImageEntry(id=t, split=split,
                                  source=f"images/{t}/source.png",
                                  candidates=candidates))

    manifest = DatasetManifest(
        mode="synthetic", votes_per_image=spec.votes_per_image,
        vote_log="votes.jsonl", images=entries)
    (out / "votes.jsonl").write_text("\n".join(vote_lines) + "\n")
    manifest_path = out / "manifest.json"
    manifest.save(manifest_path)
    counts_doc = {t: c.tolist() for t, c in vote_counts.items()}
    (out / "synth_info.json").write_text(
        json.dumps({"vote_counts": counts_doc}, indent=1, sort_keys=True) + "\n")
    return manifest_path, SynthInfo(vote_counts=vote_counts, clean=clean)


# ---------------------------------------------------------------------------
# Patch sampling


@dataclass
class PatchBatch:
    """Paired source/target patches in batch layout.

    x: (N, 3, P, P); targets: (5, N, 3, P, P) zero-padded past each image's
    target count; weights: (N, 5) rows summing to 1 over real targets;
    flipped: (N,) horizontal-flip flags.
    """

    x: np.ndarray
    targets: np.ndarray
    weights: np.ndarray
    flipped: np.ndarray
    image_ids: list[str]


def sample_patches(dataset: Dataset, patch_size: int, batch_size: int,
                   rng: np.random.Generator, split: str = "train") -> PatchBatch:
    """Uniform random crops with 1/2-probability horizontal flips.

    Target patches come from the same location of each top-5 groundtruth,
    flipped together with the source patch.
    """
    ids = dataset.split_ids(split)
    if not ids:
        raise DatasetValidationError(f"split {split!r} is empty")
    ps = patch_size
    xs = np.empty((batch_size, 3, ps, ps))
    targets = np.zeros((5, batch_size, 3, ps, ps))
    weights = np.zeros((batch_size, 5))
    flipped = np.zeros(batch_size, dtype=bool)
    chosen = []
    for n in range(batch_size):
        t = ids[int(rng.integers(len(ids)))]
        chosen.append(t)
        src = dataset.source(t)
        h, w, _ = src.shape
        if ps > h or ps > w:
            raise DatasetValidationError(
                f"patch size {ps} exceeds image {t!r} dimensions {(h, w)}")
        y0 = int(rng.integers(h - ps + 1))
        x0 = int(rng.integers(w - ps + 1))
        flip = bool(rng.random() < 0.5)
        flipped[n] = flip

        def cut(img):
            patch = img[y0:y0 + ps, x0:x0 + ps]
            if flip:
                patch = patch[:, ::-1]
            return np.transpose(patch, (2, 0, 1))

        xs[n] = cut(src)
        gts = dataset.groundtruth_set(t)
        for k, tar in enumerate(gts.targets):
            targets[k, n] = cut(tar)
            weights[n, k] = gts.weights[k]
    return PatchBatch(x=xs, targets=targets, weights=weights,
                      flipped=flipped, image_ids=chosen)
