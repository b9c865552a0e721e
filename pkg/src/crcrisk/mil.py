"""Multiple-instance Cox survival head over tile feature bags.

Each tile gets an affine score ``w . f + b`` (a width-1 convolution over the
tile axis with a single output channel). A patient's risk is the mean of the
10 highest and 10 lowest tile scores of the bag, or of every score when the
bag has at most 20 tiles. Training minimises the negative Efron partial
log-likelihood of the patient risks plus an L2 penalty on ``w``.
"""

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .rng import Stream
from .survival import RiskSets, SurvivalError
from .tissue import N_FEATURES, TissueClass

TOP_K = 10
L2_PENALTY = 1e-4
FBAG_MAGIC = b"FBAG"
FBAG_VERSION = 1


class DivergenceError(RuntimeError):
    pass


@dataclass
class FeatureBag:
    patient_id: str
    tissue: TissueClass
    features: np.ndarray  # (n_tiles, 256)

    def __post_init__(self):
        self.tissue = TissueClass.parse(self.tissue)
        f = np.asarray(self.features, dtype=np.float64)
        if f.ndim != 2 or f.shape[0] < 1:
            raise ValueError(f"bag {self.patient_id!r}: features must be (n_tiles >= 1, d)")
        if not np.isfinite(f).all():
            raise ValueError(f"bag {self.patient_id!r}: non-finite features")
        self.features = f

    @property
    def n_tiles(self):
        return self.features.shape[0]


@dataclass
class MILModel:
    w: np.ndarray
    b: float
    tissue: TissueClass
    train_median: float = float("nan")
    seed: int = 0
    epochs: int = 0

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64)
        self.b = float(self.b)
        self.tissue = TissueClass.parse(self.tissue)

    def to_json(self):
        return json.dumps(
            {
                "w": [float(v) for v in self.w],
                "b": self.b,
                "tissue": self.tissue.name,
                "train_median": self.train_median,
                "seed": self.seed,
                "epochs": self.epochs,
            },
            indent=1,
        )

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        missing = {"w", "b", "tissue", "train_median", "seed", "epochs"} - set(d)
        if missing:
            raise ValueError(f"model file missing fields: {sorted(missing)}")
        return cls(np.array(d["w"], dtype=np.float64), d["b"], d["tissue"], float(d["train_median"]), int(d["seed"]), int(d["epochs"]))

    def save(self, path):
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path):
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def _check_tissue(bag, model):
    if bag.tissue != model.tissue:
        raise ValueError(f"tissue mismatch: bag is {bag.tissue.name}, model is {model.tissue.name}")


def score_tiles(bag: FeatureBag, model: MILModel) -> np.ndarray:
    _check_tissue(bag, model)
    return bag.features @ model.w + model.b


def _selected(scores):
    """Indices of the tiles that enter the aggregate."""
    n = scores.size
    if n <= 2 * TOP_K:
        return np.arange(n)
    order = np.argsort(scores, kind="stable")
    return np.concatenate([order[:TOP_K], order[-TOP_K:]])


def aggregate(scores) -> float:
    scores = np.asarray(scores, dtype=np.float64).ravel()
    if scores.size == 0:
        raise ValueError("cannot aggregate an empty score vector")
    return float(scores[_selected(scores)].mean())


def predict_risk(bag: FeatureBag, model: MILModel) -> float:
    return aggregate(score_tiles(bag, model))


def lower_median(values) -> float:
    v = np.sort(np.asarray(values, dtype=np.float64))
    if v.size == 0:
        raise ValueError("median of empty sequence")
    return float(v[(v.size - 1) // 2])


class BagBatch:
    """Bags padded into one (patients, max_tiles, d) array for vectorised
    scoring and top/bottom selection."""

    def __init__(self, bags):
        bags = list(bags)
        self.n_tiles = np.array([b.n_tiles for b in bags])
        T = int(self.n_tiles.max())
        d = bags[0].features.shape[1]
        self.F = np.zeros((len(bags), T, d))
        for i, b in enumerate(bags):
            self.F[i, : b.n_tiles] = b.features
        self.valid = np.arange(T)[None, :] < self.n_tiles[:, None]

    def selection_weights(self, scores):
        s = np.where(self.valid, scores, np.inf)
        order = np.argsort(s, axis=1, kind="stable")
        pos = np.empty_like(order)
        rows = np.arange(s.shape[0])[:, None]
        pos[rows, order] = np.arange(s.shape[1])[None, :]
        n = self.n_tiles[:, None]
        sel = self.valid & ((n <= 2 * TOP_K) | (pos < TOP_K) | (pos >= n - TOP_K))
        return sel / sel.sum(axis=1, keepdims=True)

    def risks(self, w, b):
        scores = self.F @ w + b
        weights = self.selection_weights(scores)
        return (weights * scores).sum(axis=1), weights


def mil_loss(w, b, batch: BagBatch, risk_sets: RiskSets, l2=L2_PENALTY):
    """Training loss and its (sub)gradient w.r.t. ``w`` and ``b``.

    The selected tile set is held fixed when differentiating.
    """
    eta, weights = batch.risks(w, b)
    ll, g_eta = risk_sets.loglik_eta(eta)
    loss = -ll + l2 * float(w @ w)
    coef = g_eta[:, None] * weights
    grad_w = -np.einsum("pt,ptd->d", coef, batch.F) + 2.0 * l2 * w
    grad_b = -float(coef.sum())
    return loss, grad_w, grad_b


def _align(bags, obs):
    """Pair bags with observations; ``obs`` is a dict keyed by patient id or a
    sequence parallel to ``bags``."""
    if isinstance(obs, dict):
        try:
            obs = [obs[b.patient_id] for b in bags]
        except KeyError as exc:
            raise ValueError(f"no observation for patient {exc.args[0]!r}") from None
    obs = list(obs)
    if len(obs) != len(bags):
        raise ValueError("bags and observations differ in length")
    time = np.array([o.time for o in obs], dtype=np.float64)
    event = np.array([o.event for o in obs], dtype=bool)
    return time, event


def train_mil(bags, obs, lr=1e-3, epochs=500, seed=0, l2=L2_PENALTY, trace=None) -> MILModel:
    """Fit a per-tissue MIL Cox model by full-batch gradient descent.

    A step that would raise the loss is rejected and ``lr`` halved, so the
    loss sequence is non-increasing. ``trace``, if given, is a list that
    receives the loss after every epoch.
    """
    bags = list(bags)
    if not bags:
        raise ValueError("no bags to train on")
    tissues = {b.tissue for b in bags}
    if len(tissues) != 1:
        raise ValueError("all bags must share one tissue type")
    tissue = tissues.pop()
    time, event = _align(bags, obs)
    if len(bags) < 2 or not event.any():
        raise SurvivalError("no events: need >= 2 patients and >= 1 event")

    batch = BagBatch(bags)
    rs = RiskSets(time, event)
    d = batch.F.shape[2]
    w = 0.01 * Stream(seed, 0x3A11).normal(d)
    b = 0.0
    loss, gw, gb = mil_loss(w, b, batch, rs, l2)
    if not math.isfinite(loss):
        raise DivergenceError("diverged: non-finite initial loss")
    for _ in range(int(epochs)):
        while True:
            w_new, b_new = w - lr * gw, b - lr * gb
            new_loss, new_gw, new_gb = mil_loss(w_new, b_new, batch, rs, l2)
            if math.isfinite(new_loss) and new_loss <= loss:
                break
            lr /= 2.0
            if lr < 1e-14:
                break
        if not math.isfinite(new_loss):
            raise DivergenceError("diverged: non-finite loss")
        if new_loss <= loss:
            w, b, loss, gw, gb = w_new, b_new, new_loss, new_gw, new_gb
        if trace is not None:
            trace.append(loss)
        if lr < 1e-14:
            break
    risks, _ = batch.risks(w, b)
    return MILModel(w, b, tissue, lower_median(risks), int(seed), int(epochs))


def predict_batch(bags, model: MILModel) -> np.ndarray:
    bags = list(bags)
    for bag in bags:
        _check_tissue(bag, model)
    if not bags:
        return np.zeros(0)
    return BagBatch(bags).risks(model.w, model.b)[0]


# ---------------------------------------------------------------------------
# FBAG binary format
#
#   b"FBAG" | u16 version=1 | records...
#   record: u32 id_len | id utf-8 | u8 tissue | u32 n_tiles | n_tiles*256 f32
# All integers and floats little-endian.


def write_bags(path, bags):
    with open(path, "wb") as fh:
        fh.write(FBAG_MAGIC)
        fh.write(struct.pack("<H", FBAG_VERSION))
        for bag in bags:
            if bag.features.shape[1] != N_FEATURES:
                raise ValueError(f"bag {bag.patient_id!r}: expected {N_FEATURES} features per tile")
            pid = bag.patient_id.encode("utf-8")
            fh.write(struct.pack("<I", len(pid)))
            fh.write(pid)
            fh.write(struct.pack("<BI", int(bag.tissue), bag.n_tiles))
            fh.write(np.ascontiguousarray(bag.features, dtype="<f4").tobytes())


def read_bags(path):
    data = Path(path).read_bytes()
    if data[:4] != FBAG_MAGIC:
        raise ValueError(f"{path}: not an FBAG file")
    (version,) = struct.unpack_from("<H", data, 4)
    if version != FBAG_VERSION:
        raise ValueError(f"{path}: unsupported FBAG version {version}")
    pos = 6
    bags = []
    seen = set()
    while pos < len(data):
        try:
            (n_id,) = struct.unpack_from("<I", data, pos)
            pos += 4
            pid = data[pos:pos + n_id].decode("utf-8")
            pos += n_id
            code, n_tiles = struct.unpack_from("<BI", data, pos)
            pos += 5
        except struct.error:
            raise ValueError(f"{path}: truncated record header") from None
        nbytes = n_tiles * N_FEATURES * 4
        if pos + nbytes > len(data):
            raise ValueError(f"{path}: truncated feature block for {pid!r}")
        if code >= len(TissueClass):
            raise ValueError(f"{path}: bad tissue code {code} for {pid!r}")
        feats = np.frombuffer(data, dtype="<f4", count=n_tiles * N_FEATURES, offset=pos).reshape(n_tiles, N_FEATURES)
        pos += nbytes
        key = (pid, code)
        if key in seen:
            raise ValueError(f"{path}: duplicate bag for patient {pid!r}, tissue {TissueClass(code).name}")
        seen.add(key)
        bags.append(FeatureBag(pid, TissueClass(code), feats.astype(np.float64)))
    return bags
