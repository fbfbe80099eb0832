"""Dataset generation, training, evaluation, adaptation and the TTT on/off comparison."""
from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from . import data as D
from .config import ExperimentConfig
from .losses import LossConfig, composite_loss, weighted_mae
from .metrics import MetricReport, csi, confusion, ets, evaluate
from .model import REETTT, freeze_backbone
from .optim import AdamW, CosineSchedule
from .tensor import NonFiniteError, Tensor, no_grad

log = logging.getLogger(__name__)

MODES = ("ttt_on", "ttt_off")
SPLITS = ("train", "val", "test")


class DivergenceError(RuntimeError):
    def __init__(self, epoch: int, batch: int, detail: str = ""):
        self.epoch, self.batch = epoch, batch
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}" + (f": {detail}" if detail else ""))


# -- data ---------------------------------------------------------------------

def _sequence_seed(seed: int, domain_id: int, split: str, index: int) -> int:
    ss = np.random.SeedSequence([seed, domain_id, SPLITS.index(split), index])
    return int(ss.generate_state(1, np.uint64)[0])


def split_counts(n: int, train_ratio: float) -> tuple[int, int]:
    n_train = int(round(n * train_ratio))
    return n_train, n - n_train


def gen_data(cfg: ExperimentConfig, out_dir) -> D.DatasetManifest:
    """Write RSEQ files for the training regime and the shift regime plus a manifest.

    Splits are whole sequences, so no window ever straddles two splits.
    """
    dc, mc = cfg.data, cfg.model
    if dc.window != 2 * mc.t:
        raise ValueError(f"window {dc.window} must equal 2*T = {2 * mc.t}")
    out = Path(out_dir)
    plan = []
    for regime, pool, test in ((dc.domain, dc.sequences, dc.test_sequences),
                               (dc.shift_domain, dc.shift_sequences, dc.shift_test_sequences)):
        n_train, n_val = split_counts(pool, dc.train_ratio)
        plan.append((regime, {"train": n_train, "val": n_val, "test": test}))
    entries = []
    total_retries = 0
    for regime, counts in plan:
        dom = D.DOMAIN_IDS[regime]
        (out / regime).mkdir(parents=True, exist_ok=True)
        for split in SPLITS:
            for i in range(counts[split]):
                seq, retries = D.generate_filtered(D.REGIMES[regime], _sequence_seed(cfg.seed, dom, split, i),
                                                   dc.t_total, mc.h, mc.w, dom)
                total_retries += retries
                rel = f"{regime}/{split}_{i:03d}.rseq"
                D.save(seq, out / rel)
                n_win = len(D.window_starts(dc.t_total, dc.window, dc.stride))
                entries.append(D.ManifestEntry(rel, n_win, dom, split))
    log.info("generated %d sequences (%d filter retries)", len(entries), total_retries)
    manifest = D.DatasetManifest(entries, dc.window, dc.stride, str(out))
    manifest.save(out / "manifest.json")
    return manifest


def load_windows(manifest: D.DatasetManifest, split: str, domain_id: int) -> tuple[np.ndarray, np.ndarray]:
    """Normalized (N, T, 1, H, W) inputs and targets."""
    pairs = D.sliding_windows(manifest, split, domain_id)
    if not pairs:
        raise ValueError(f"manifest has no {split} windows for domain {domain_id}")
    x = np.stack([D.normalize(a) for a, _ in pairs])[:, :, None]
    y = np.stack([D.normalize(b) for _, b in pairs])[:, :, None]
    return x, y


def load_sequence_windows(manifest: D.DatasetManifest, split: str, domain_id: int):
    """Per-sequence lists of normalized window stacks, in manifest order."""
    out = []
    for entry in manifest.files(split, domain_id):
        seq = D.load(manifest.resolve(entry))
        pairs = D.sequence_windows(seq, manifest.window, manifest.stride)
        x = np.stack([D.normalize(a) for a, _ in pairs])[:, :, None]
        y = np.stack([D.normalize(b) for _, b in pairs])[:, :, None]
        out.append((entry.path, x, y))
    if not out:
        raise ValueError(f"manifest has no {split} sequences for domain {domain_id}")
    return out


# -- inference ----------------------------------------------------------------

def predict(model: REETTT, x: np.ndarray, mode: str = "ttt_on", batch_size: int = 8) -> np.ndarray:
    """Normalized forecasts; the tape is off, parameters are never touched."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    outs = []
    with no_grad():
        for i in range(0, len(x), batch_size):
            outs.append(model(Tensor(x[i:i + batch_size]), mode=mode).data)
    return np.concatenate(outs, axis=0)


def score(model: REETTT, x: np.ndarray, y: np.ndarray, mode: str = "ttt_on", batch_size: int = 8,
          fingerprint: str = "", settings: dict | None = None) -> MetricReport:
    pred = predict(model, x, mode, batch_size)
    return evaluate(D.denormalize(pred), D.denormalize(y), fingerprint=fingerprint, settings=settings)


def pooled_ets(pred: np.ndarray, y: np.ndarray, tau: float = 25.0) -> float | None:
    """ETS from counts pooled over every sample and lead time."""
    return ets(confusion(D.denormalize(pred), D.denormalize(y), tau))


# -- training -----------------------------------------------------------------

@dataclass
class RunRecord:
    fingerprint: str
    initial: dict = field(default_factory=dict)  # scores of the untrained starting point
    train_loss: list = field(default_factory=list)  # one entry per epoch
    val_loss: list = field(default_factory=list)
    val_ets: list = field(default_factory=list)
    selected_epoch: int = 0
    criterion: float | None = None
    trainable: int = 0
    wall_clock: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunRecord":
        return cls(**json.loads(text))

    def __eq__(self, other) -> bool:
        # wall-clock time is not part of a run's identity
        if not isinstance(other, RunRecord):
            return NotImplemented
        a, b = self.to_dict(), other.to_dict()
        a.pop("wall_clock")
        b.pop("wall_clock")
        return a == b


def _better(value, best) -> bool:
    if value is None:
        return False
    return best is None or value > best


def _batch_loss(model, xb, yb, loss_cfg, mode="ttt_on"):
    return composite_loss(model(Tensor(xb), mode=mode), yb, loss_cfg)


def dataset_loss(model, x, y, loss_cfg: LossConfig, batch_size: int = 8) -> float:
    total = 0.0
    with no_grad():
        for i in range(0, len(x), batch_size):
            total += _batch_loss(model, x[i:i + batch_size], y[i:i + batch_size], loss_cfg).item() * len(x[i:i + batch_size])
    return total / len(x)


def fit(model: REETTT, params: dict, train: tuple, val: tuple | None, epochs: int, loss_cfg: LossConfig,
        tc, seed: int, fingerprint: str = "") -> tuple[RunRecord, dict]:
    """Outer-loop training of ``params``; returns the record and the selected state.

    The initial model (epoch 0, kept in ``initial``) is itself a selection candidate.  With
    validation data selection maximizes pooled validation ETS at ``tc.select_tau``;
    without it the lowest training loss wins.
    """
    start = time.perf_counter()
    x, y = train
    bs = tc.batch_size
    steps_per_epoch = -(-len(x) // bs)
    opt = AdamW(params, CosineSchedule(tc.lr_initial, tc.lr_final, max(1, epochs * steps_per_epoch)),
                weight_decay=tc.weight_decay)
    rec = RunRecord(fingerprint, trainable=int(sum(p.size for p in params.values())))
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xF17]))

    def validate(train_loss, into):
        into["train_loss"].append(train_loss)
        if val is None:
            return -train_loss
        pred = predict(model, val[0], "ttt_on", bs)
        v_ets = pooled_ets(pred, val[1], tc.select_tau)
        into["val_loss"].append(float(composite_loss(Tensor(pred), val[1], loss_cfg).item()))
        into["val_ets"].append(v_ets)
        return v_ets

    best_state = ckpt.state_dict(model)
    first = {"train_loss": [], "val_loss": [], "val_ets": []}
    best = validate(dataset_loss(model, x, y, loss_cfg, bs), first)
    rec.initial = {k: (v[0] if v else None) for k, v in first.items()}
    history = {"train_loss": rec.train_loss, "val_loss": rec.val_loss, "val_ets": rec.val_ets}
    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(x))
        losses = []
        for b in range(steps_per_epoch):
            idx = np.sort(order[b * bs:(b + 1) * bs])
            opt.zero_grad()
            try:
                loss = _batch_loss(model, x[idx], y[idx], loss_cfg)
                loss.backward()
            except NonFiniteError as exc:
                raise DivergenceError(epoch, b, str(exc)) from None
            if not np.isfinite(loss.item()):
                raise DivergenceError(epoch, b)
            opt.step()
            losses.append(loss.item() * len(idx))
        value = validate(sum(losses) / len(x), history)
        log.info("epoch %d train %.5f val_ets %s", epoch, rec.train_loss[-1], rec.val_ets[-1] if rec.val_ets else "-")
        if _better(value, best):
            best = value
            rec.selected_epoch = epoch
            best_state = ckpt.state_dict(model)
    rec.criterion = None if val is None else best
    rec.wall_clock = time.perf_counter() - start
    return rec, best_state


def build_model(cfg: ExperimentConfig) -> REETTT:
    return REETTT(cfg.effective_model(), seed=cfg.seed)


def model_fingerprint(cfg: ExperimentConfig) -> bytes:
    return ckpt.fingerprint(cfg.effective_model().canonical())


def save_model(model: REETTT, cfg: ExperimentConfig, path, state: dict | None = None) -> None:
    ckpt.save(path, state if state is not None else ckpt.state_dict(model), model_fingerprint(cfg))


def load_model(cfg: ExperimentConfig, path) -> REETTT:
    tensors, _ = ckpt.load(path, model_fingerprint(cfg))
    model = build_model(cfg)
    ckpt.load_state(model, tensors)
    return model


def train_model(cfg: ExperimentConfig, manifest: D.DatasetManifest) -> tuple[REETTT, RunRecord]:
    model = build_model(cfg)
    dom = cfg.data.domain_id
    train = load_windows(manifest, "train", dom)
    val = load_windows(manifest, "val", dom) if manifest.files("val", dom) else None
    rec, state = fit(model, model.parameters(), train, val, cfg.training.epochs, cfg.effective_loss(),
                     cfg.training, cfg.seed, cfg.fingerprint())
    ckpt.load_state(model, state)
    return model, rec


# -- commands -----------------------------------------------------------------

def _manifest(m) -> D.DatasetManifest:
    return m if isinstance(m, D.DatasetManifest) else D.DatasetManifest.load(m)


def cmd_gen_data(cfg: ExperimentConfig, out_dir) -> D.DatasetManifest:
    return gen_data(cfg, out_dir)


def cmd_train(cfg: ExperimentConfig, manifest, out_checkpoint=None) -> RunRecord:
    model, rec = train_model(cfg, _manifest(manifest))
    if out_checkpoint is not None:
        save_model(model, cfg, out_checkpoint)
        Path(str(out_checkpoint) + ".run.json").write_text(rec.to_json() + "\n")
    return rec


def cmd_evaluate(cfg: ExperimentConfig, checkpoint, manifest, mode: str = "ttt_on", split: str = "test",
                 domain_id: int | None = None, out=None) -> MetricReport:
    m = _manifest(manifest)
    dom = cfg.data.domain_id if domain_id is None else domain_id
    model = load_model(cfg, checkpoint)
    x, y = load_windows(m, split, dom)
    settings = {"mode": mode, "split": split, "domain_id": dom, "loss": asdict(cfg.effective_loss())}
    report = score(model, x, y, mode, cfg.training.batch_size, cfg.fingerprint(), settings)
    if out is not None:
        Path(out).write_text(report.to_json() + "\n")
    return report


def cmd_predict(cfg: ExperimentConfig, checkpoint, sequence_path, out, mode: str = "ttt_on") -> D.RadarSequence:
    """Forecast T' frames from the last T frames of an RSEQ file; writes an RSEQ of dBZ frames."""
    model = load_model(cfg, checkpoint)
    seq = D.load(sequence_path)
    t = cfg.model.t
    if seq.frames.shape[0] < t:
        raise ValueError(f"sequence has {seq.frames.shape[0]} frames, need at least {t}")
    x = D.normalize(seq.frames[-t:])[None, :, None]
    pred = D.denormalize(predict(model, x, mode)[0, :, 0]).astype(np.float32).astype(np.float64)
    result = D.RadarSequence(pred, domain_id=seq.domain_id, seed=seq.seed,
                             frame_interval_minutes=seq.frame_interval_minutes)
    D.save(result, out)
    return result


def cmd_adapt(cfg: ExperimentConfig, checkpoint, manifest, out_checkpoint=None) -> RunRecord:
    """Freeze the backbone and fine-tune skip branch, fusion weights and W0 on the config's data domain."""
    m = _manifest(manifest)
    model = load_model(cfg, checkpoint)
    params = freeze_backbone(model)
    dom = cfg.data.domain_id
    train = load_windows(m, "train", dom)
    val = load_windows(m, "val", dom)
    rec, state = fit(model, params, train, val, cfg.training.adapt_epochs, cfg.effective_loss(),
                     cfg.training, cfg.seed, cfg.fingerprint())
    ckpt.load_state(model, state)
    if out_checkpoint is not None:
        save_model(model, cfg, out_checkpoint)
        Path(str(out_checkpoint) + ".run.json").write_text(rec.to_json() + "\n")
    return rec


@dataclass
class Comparison:
    sequences: list
    mae: dict  # arm -> per-sequence weighted MAE
    csi25: dict  # arm -> per-lead pooled CSI at 25 dBZ
    ets25: dict  # arm -> pooled ETS at 25 dBZ over all leads
    win_rate: float
    fingerprint: str = ""

    def mean_csi(self, arm: str) -> float:
        vals = [v for v in self.csi25[arm] if v is not None]
        return float(np.mean(vals)) if vals else float("nan")

    def to_json(self) -> str:
        body = asdict(self)
        body["mean_csi25"] = {arm: self.mean_csi(arm) for arm in MODES}
        return json.dumps(body, indent=2, sort_keys=True)

    def csv_rows(self) -> list[tuple]:
        return [(arm, i + 1, v) for arm in MODES for i, v in enumerate(self.csi25[arm])]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["arm", "lead", "csi25"])
            for arm, lead, v in self.csv_rows():
                w.writerow([arm, lead, "" if v is None else repr(v)])


def win_rate(a, b) -> float:
    """Share of paired items where ``a`` is lower; exact ties count half."""
    a, b = np.asarray(a), np.asarray(b)
    if len(a) != len(b) or len(a) == 0:
        raise ValueError("need two equal-length, non-empty lists")
    return float(((a < b).sum() + 0.5 * (a == b).sum()) / len(a))


def compare_ttt(model: REETTT, seqs, loss_cfg: LossConfig, threads: int = 1, batch_size: int = 8,
                fingerprint: str = "") -> Comparison:
    def run(item):
        _, x, y = item
        out = {}
        for arm in MODES:
            pred = predict(model, x, arm, batch_size)
            out[arm] = (pred, weighted_mae(Tensor(pred), y, loss_cfg).item())
        return out

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, seqs))  # map keeps input order
    else:
        results = [run(s) for s in seqs]
    y_all = np.concatenate([y for _, _, y in seqs])
    mae, curves, ets25 = {}, {}, {}
    for arm in MODES:
        mae[arm] = [r[arm][1] for r in results]
        pred = np.concatenate([r[arm][0] for r in results])
        p_dbz, y_dbz = D.denormalize(pred)[:, :, 0], D.denormalize(y_all)[:, :, 0]
        curves[arm] = [csi(confusion(p_dbz[:, i], y_dbz[:, i], 25.0)) for i in range(p_dbz.shape[1])]
        ets25[arm] = ets(confusion(p_dbz, y_dbz, 25.0))
    return Comparison([name for name, _, _ in seqs], mae, curves, ets25,
                      win_rate(mae["ttt_on"], mae["ttt_off"]), fingerprint)


def cmd_compare_ttt(cfg: ExperimentConfig, checkpoint, manifest, split: str = "test", domain_id: int | None = None,
                    threads: int = 1, emit_csv=None, out=None) -> Comparison:
    m = _manifest(manifest)
    dom = cfg.data.shift_domain_id if domain_id is None else domain_id
    model = load_model(cfg, checkpoint)
    seqs = load_sequence_windows(m, split, dom)
    comp = compare_ttt(model, seqs, cfg.effective_loss(), threads, cfg.training.batch_size, cfg.fingerprint())
    if emit_csv is not None:
        comp.write_csv(emit_csv)
    if out is not None:
        Path(out).write_text(comp.to_json() + "\n")
    return comp
