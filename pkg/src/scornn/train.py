"""Training loop, evaluation and metrics files for the benchmark tasks."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import linalg, network, optim, tasks
from .config import ExperimentConfig
from .stiefel import orthogonality_score

log = logging.getLogger(__name__)

METRICS_SCHEMA = "scornn-metrics/1"
METRICS_COLUMNS = ["iteration", "epoch", "train_loss", "eval_loss", "eval_metric",
                   "orth_score", "status", "wall_seconds"]
GRADNORM_COLUMNS = ["iteration", "t", "hidden_grad_norm"]

# rng stream ids, mixed with the run seed
_INIT, _TRAIN, _EVAL, _ORDER = 0, 1, 2, 3


class TrainingDiverged(FloatingPointError):
    pass


def forward(model, inputs, output_mode):
    if isinstance(model, network.ScoCell):
        return network.sco_forward(model, inputs, output_mode)
    return network.lstm_forward(model, inputs, output_mode)


def backward(model, tape, dout, capture_hidden_norms=False):
    if isinstance(model, network.ScoCell):
        return network.sco_backward(model, tape, dout, capture_hidden_norms)
    return network.lstm_backward(model, tape, dout, capture_hidden_norms)


def loss_and_grads(model, batch: tasks.TaskBatch, capture_hidden_norms=False):
    out, tape = forward(model, batch.inputs, batch.output_mode)
    loss, dout = tasks.task_loss(out, batch)
    return loss, backward(model, tape, dout, capture_hidden_norms)


def task_dims(task: str) -> tuple[int, int]:
    """Input and output sizes per task."""
    return {"copying": (10, 10), "adding": (2, 1), "mnist": (1, 10), "mnist-permuted": (1, 10)}[task]


def build_model(cfg: ExperimentConfig, rng: np.random.Generator):
    m, p = task_dims(cfg.task)
    if cfg.model == "scornn":
        return network.ScoCell.init(cfg.n, m, p, cfg.resolved_rho(), rng)
    return network.LstmCell.init(cfg.n, m, p, rng, forget_bias=cfg.forget_bias)


def build_groups(model, cfg: ExperimentConfig) -> list[optim.ParamGroup]:
    params = model.params()
    if isinstance(model, network.ScoCell):
        groups = [optim.ParamGroup(k, v, cfg.lr, cfg.optimizer) for k, v in params.items() if k != "skew"]
        groups.append(optim.ParamGroup("skew", params["skew"], cfg.lr_rec, cfg.optimizer_rec))
        return groups
    return [optim.ParamGroup(k, v, cfg.lr, cfg.optimizer) for k, v in params.items()]


def apply_grads(model, groups: list[optim.ParamGroup], grads, iteration: int) -> None:
    gd = grads.as_dict()
    for g in groups:
        if g.name == "skew":
            model.W = optim.step_skew(g, grads.d_skew, model.skew, model.scaling, iteration)
        else:
            optim.step(g, gd[g.name], iteration)


class TaskData:
    """Deterministic train/eval batches for one configuration."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.seed = cfg.seed
        if cfg.task.startswith("mnist"):
            permute = cfg.permute_seed if cfg.task == "mnist-permuted" else None
            self.mnist = tasks.load_mnist_splits(cfg.data_dir or None, permute)

    def _rng(self, *stream) -> np.random.Generator:
        return np.random.default_rng([self.seed, *stream])

    def batches_per_epoch(self) -> int:
        if self.cfg.task == "adding":
            return self.cfg.train_size // self.cfg.batch_size
        if self.cfg.task.startswith("mnist"):
            return math.ceil(len(self.mnist["train"]) / self.cfg.batch_size)
        return self.cfg.iterations

    def train_batch(self, epoch: int, index: int) -> tasks.TaskBatch:
        cfg = self.cfg
        if cfg.task == "copying":
            return tasks.gen_copying(cfg.T, cfg.batch_size, self._rng(_TRAIN, index))
        order = self._epoch_order(epoch)
        if cfg.task == "adding":
            # the training set is a fixed list of generated mini-batches, visited in shuffled order
            return tasks.gen_adding(cfg.T, cfg.batch_size, self._rng(_TRAIN, int(order[index])))
        idx = order[index * cfg.batch_size:(index + 1) * cfg.batch_size]
        return self.mnist["train"].batch(idx)

    def _epoch_order(self, epoch: int) -> np.ndarray:
        if getattr(self, "_order_epoch", None) != epoch:
            size = self.batches_per_epoch() if self.cfg.task == "adding" else len(self.mnist["train"])
            self._order = self._rng(_ORDER, epoch).permutation(size)
            self._order_epoch = epoch
        return self._order

    def eval_batches(self):
        cfg = self.cfg
        if cfg.task == "copying":
            yield tasks.gen_copying(cfg.T, cfg.eval_size, self._rng(_EVAL))
        elif cfg.task == "adding":
            full, rest = divmod(cfg.test_size, cfg.eval_batch_size)
            for j, size in enumerate([cfg.eval_batch_size] * full + ([rest] if rest else [])):
                yield tasks.gen_adding(cfg.T, size, self._rng(_EVAL, j))
        else:
            test = self.mnist["test"]
            for start in range(0, len(test), cfg.eval_batch_size):
                yield test.batch(np.arange(start, min(start + cfg.eval_batch_size, len(test))))


def evaluate(model, data: TaskData) -> tuple[float, float]:
    """Sample-weighted mean loss and metric over the evaluation set."""
    total = loss_sum = metric_sum = 0.0
    for batch in data.eval_batches():
        out, _ = forward(model, batch.inputs, batch.output_mode)
        loss, _ = tasks.task_loss(out, batch)
        k = len(batch)
        loss_sum += loss * k
        metric_sum += tasks.task_metric(out, batch) * k
        total += k
    return loss_sum / total, metric_sum / total


@dataclass
class RunResult:
    rows: list = field(default_factory=list)
    gradnorms: list = field(default_factory=list)
    model: object = None
    status: str = "ok"

    def column(self, name: str) -> list:
        return [r[name] for r in self.rows]


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


class MetricsWriter:
    def __init__(self, path: Path, columns):
        self.fh = open(path, "w", newline="")
        self.fh.write(f"#schema={METRICS_SCHEMA}\n")
        self.writer = csv.writer(self.fh, lineterminator="\n")
        self.writer.writerow(columns)
        self.columns = columns

    def write(self, row: dict) -> None:
        self.writer.writerow([_fmt(row[c]) for c in self.columns])
        self.fh.flush()

    def close(self):
        self.fh.close()


def read_metrics(path) -> list[dict]:
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def run(cfg: ExperimentConfig, out_dir=None) -> RunResult:
    """Train one model to completion, writing ``metrics.csv`` and ``checkpoint.npz``.

    Raises ``TrainingDiverged`` after writing a diagnostic row if the training
    loss becomes non-finite.
    """
    cfg.validate()
    out = Path(out_dir or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.dumps())
    with linalg.precision(cfg.precision):
        return _run(cfg, out)


def _run(cfg: ExperimentConfig, out: Path) -> RunResult:
    model = build_model(cfg, np.random.default_rng([cfg.seed, _INIT]))
    groups = build_groups(model, cfg)
    data = TaskData(cfg)
    result = RunResult(model=model)
    metrics = MetricsWriter(out / "metrics.csv", METRICS_COLUMNS)
    gradnorm_file = MetricsWriter(out / "gradnorms.csv", GRADNORM_COLUMNS) if cfg.hidden_norms_every else None
    t0 = time.perf_counter()
    n_evals = 0

    def emit(iteration, epoch, train_loss, status="ok"):
        nonlocal n_evals
        if status == "ok":
            eval_loss, eval_metric = evaluate(model, data)
        else:
            eval_loss = eval_metric = float("nan")
        orth = float("nan")
        if isinstance(model, network.ScoCell) and n_evals % cfg.orth_every == 0:
            orth = orthogonality_score(model.W)
        n_evals += 1
        row = dict(iteration=iteration, epoch=epoch, train_loss=float(train_loss), eval_loss=float(eval_loss),
                   eval_metric=float(eval_metric), orth_score=orth, status=status,
                   wall_seconds=round(time.perf_counter() - t0, 3))
        metrics.write(row)
        result.rows.append(row)
        log.info("iter %d epoch %d train %.6g eval %.6g metric %.6g", iteration, epoch, train_loss, eval_loss, eval_metric)
        return eval_loss

    try:
        emit(0, 0, float("nan"))
        iteration = 0
        streamed = cfg.task == "copying"
        n_epochs = 1 if streamed else cfg.epochs
        per_epoch = data.batches_per_epoch()
        stop = False
        for epoch in range(n_epochs):
            running, count = 0.0, 0
            for index in range(per_epoch):
                batch = data.train_batch(epoch, index)
                iteration += 1
                capture = bool(cfg.hidden_norms_every) and iteration % cfg.hidden_norms_every == 0
                loss, grads = loss_and_grads(model, batch, capture)
                if not math.isfinite(loss):
                    result.status = "diverged"
                    emit(iteration, epoch + (not streamed), loss, status="diverged")
                    raise TrainingDiverged(f"non-finite training loss at iteration {iteration}")
                if capture:
                    for t, v in enumerate(grads.hidden_norms):
                        gradnorm_file.write(dict(iteration=iteration, t=t, hidden_grad_norm=float(v)))
                    result.gradnorms.append((iteration, grads.hidden_norms))
                try:
                    apply_grads(model, groups, grads, iteration)
                except optim.OptimizerFault as exc:
                    result.status = "diverged"
                    emit(iteration, epoch + (not streamed), loss, status="diverged")
                    raise TrainingDiverged(str(exc)) from exc
                running += loss
                count += 1
                if streamed and iteration % cfg.eval_every == 0:
                    eval_loss = emit(iteration, 0, running / count)
                    running, count = 0.0, 0
                    if eval_loss < cfg.stop_below:
                        stop = True
                        break
            if not streamed and count:
                eval_loss = emit(iteration, epoch + 1, running / count)
                if eval_loss < cfg.stop_below:
                    stop = True
            if stop:
                break
    finally:
        metrics.close()
        if gradnorm_file:
            gradnorm_file.close()
        network.save_checkpoint(out / "checkpoint.npz", model,
                                extra={"config": cfg.to_dict(), "status": result.status},
                                arrays=optim.state_arrays(groups))
    return result


def eval_checkpoint(path, out_path=None, data_dir: str | None = None) -> dict:
    """Evaluate a saved model on its task's test set; optionally write a one-row CSV."""
    _, header, _ = network.load_checkpoint(path)
    cfg = ExperimentConfig(**header["config"])
    if data_dir:
        cfg.data_dir = data_dir
    with linalg.precision(cfg.precision):
        model, _, _ = network.load_checkpoint(path)
        eval_loss, eval_metric = evaluate(model, TaskData(cfg))
    orth = orthogonality_score(model.W) if isinstance(model, network.ScoCell) else float("nan")
    row = dict(eval_loss=eval_loss, eval_metric=eval_metric, orth_score=orth)
    if out_path:
        w = MetricsWriter(Path(out_path), list(row))
        w.write(row)
        w.close()
    return row
