"""Command-line interface and experiment runner.

Exit codes: 0 success, 2 configuration error, 3 estimator error,
4 budget or acceptance-floor abort.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import os
import sys
import time
from fractions import Fraction
from pathlib import Path

import jsonschema
import numpy as np

from percolab import __version__
from percolab.errors import BudgetExceeded, ConfigError, EstimatorError, PercolabError
from percolab.estimate import CurvePoint, EstimateWithError
from percolab.kernel import Family, build_kernel, truncation_tail_constant
from percolab.percolation import BatchRequest, EdgeCoinSource, LatticeModel, RadiusCap, estimate_pc

log = logging.getLogger("percolab")

CSV_HEADER = ("abscissa", "value", "stderr", "n_samples")
DEFAULT_CHUNK = 1 << 16

# ---------------------------------------------------------------------- #
# configuration

_KERNEL = {
    "type": "object",
    "additionalProperties": False,
    "required": ["family", "d"],
    "properties": {
        "family": {"type": "string"},
        "d": {"type": "integer", "minimum": 1},
        "L": {"type": "integer", "minimum": 1},
        "alpha": {"type": "number", "exclusiveMinimum": 0},
        "trunc_radius": {"type": "number", "exclusiveMinimum": 0},
    },
}

_NUMS = {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 1}

_OBS_KINDS = ["one_arm", "ball_volume", "size_tail", "second_moment", "long_edge", "iic_volume", "backbone"]

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["kernel", "p"],
    "properties": {
        "kernel": _KERNEL,
        "p": {
            "type": "object",
            "additionalProperties": False,
            "required": ["mode"],
            "properties": {
                "mode": {"enum": ["fixed", "critical"]},
                "method": {"enum": ["crossing", "susceptibility"]},
                "p_grid": _NUMS,
                "value": {"type": "number", "minimum": 0},
                "r_pair": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
                "tol": {"type": "number", "exclusiveMinimum": 0},
                "budget": {"type": "integer", "minimum": 1},
                "bracket": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
                "max_iterations": {"type": "integer", "minimum": 1},
                "stderr": {"type": "number", "minimum": 0},
            },
        },
        "observables": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["name", "grid"],
                "properties": {
                    "name": {"enum": _OBS_KINDS},
                    "label": {"type": "string", "pattern": "^[A-Za-z0-9_.-]+$"},
                    "grid": _NUMS,
                    "samples": {"type": "integer", "minimum": 2},
                    "accepted": {"type": "integer", "minimum": 2},
                    "cap": {"type": "integer", "minimum": 2},
                    "n_factor": {"type": "number", "exclusiveMinimum": 1},
                    "k": {"type": "integer", "minimum": 1},
                    "R_factor": {"type": "number", "minimum": 4},
                    "floor": {"type": "number", "exclusiveMinimum": 0},
                },
            },
        },
        "seed": {"type": "integer", "minimum": 0},
        "workers": {"type": "integer", "minimum": 1},
        "out": {"type": "string"},
        "chunk": {"type": "integer", "minimum": 1},
        "report": {"type": "object"},
    },
}


def validate_config(cfg: dict) -> dict:
    """Schema check (unknown keys are errors) plus cross-field rules; returns a normalised copy."""
    v = jsonschema.Draft7Validator(CONFIG_SCHEMA)
    errors = sorted(v.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        path = ".".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(f"config error at {path}: {e.message}")
    cfg = json.loads(json.dumps(cfg))
    p = cfg["p"]
    if p["mode"] == "fixed" and "value" not in p:
        raise ConfigError("config error at p.value: required when mode is 'fixed'")
    if p["mode"] == "critical":
        need = ("p_grid", "budget") if p.get("method") == "susceptibility" else ("r_pair", "tol", "budget")
        for key in need:
            if key not in p:
                raise ConfigError(f"config error at p.{key}: required when mode is 'critical'")
    labels = set()
    for i, ob in enumerate(cfg.get("observables", [])):
        ob.setdefault("label", ob["name"])
        if ob["label"] in labels:
            raise ConfigError(f"config error at observables.{i}.label: duplicate label {ob['label']!r}")
        labels.add(ob["label"])
        key = "accepted" if ob["name"] == "backbone" else "samples"
        if key not in ob:
            raise ConfigError(f"config error at observables.{i}.{key}: required for {ob['name']}")
        if ob["name"] == "size_tail" and any(g != int(g) for g in ob["grid"]):
            raise ConfigError(f"config error at observables.{i}.grid: sizes must be integers")
    try:
        kernel_from_config(cfg["kernel"])
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(f"config error at kernel: {exc}") from exc
    return cfg


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}") from exc
    return validate_config(cfg)


def kernel_from_config(k: dict):
    return build_kernel(k["family"], k["d"], L=k.get("L", 1), alpha=k.get("alpha"),
                        trunc_radius=k.get("trunc_radius"))


def config_digest(cfg: dict) -> str:
    """Digest of everything that determines results (worker count and output path excluded)."""
    core = {k: v for k, v in cfg.items() if k not in ("workers", "out")}
    return hashlib.sha256(json.dumps(core, sort_keys=True).encode()).hexdigest()


# ---------------------------------------------------------------------- #
# exact accumulators (per-sample statistics are integers)

def _isum(x, power=1) -> int:
    return sum(int(v) ** power for v in np.asarray(x).ravel().tolist())


def _mean_estimate(n, s, ss, seed, meta, binomial=False) -> EstimateWithError:
    mean = Fraction(s, n)
    if binomial:
        var = mean * (1 - mean) / n
    else:
        var = (Fraction(ss) - Fraction(s * s, n)) / (n - 1) / n if n > 1 else Fraction(0)
    return EstimateWithError(float(mean), math.sqrt(max(float(var), 0.0)), n, seed, meta, float(s), float(ss))


def _write_csv(path: Path, points) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for a, v, se, n in points:
        w.writerow([repr(float(a)), repr(float(v)), repr(float(se)), int(n)])
    data = buf.getvalue().encode()
    path.write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def _atomic_json(path: Path, obj) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable))
    os.replace(tmp, path)


def _jsonable(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (set, frozenset, tuple)):
        return list(o)
    if hasattr(o, "as_dict"):
        return o.as_dict()
    if hasattr(o, "to_dict"):
        return o.to_dict()
    return str(o)


# ---------------------------------------------------------------------- #
# observable runners: each step consumes one chunk of sample indices

class _Runner:
    def __init__(self, ob, kernel, p, seed, workers, chunk, pc_stderr=0.0):
        self.ob = ob
        self.kernel = kernel
        self.p = p
        self.seed = seed
        self.workers = workers
        self.chunk = chunk
        self.grid = [float(g) for g in ob["grid"]]
        self.pc_stderr = pc_stderr

    def model(self, p=None):
        return LatticeModel(self.kernel, self.p if p is None else p, workers=self.workers)

    def fresh(self) -> dict:
        k = len(self.grid)
        return {"next": 0, "n": 0, "s": [0] * k, "ss": [0] * k, "extra": {}}

    def done(self, st) -> bool:
        return st["next"] >= self.ob["samples"]

    def step(self, st) -> None:
        raise NotImplementedError

    def _add_columns(self, st, cols):
        cols = np.asarray(cols)
        st["n"] += cols.shape[0]
        for j in range(cols.shape[1]):
            st["s"][j] += _isum(cols[:, j])
            st["ss"][j] += _isum(cols[:, j], 2)

    def _count(self, st):
        return min(self.chunk, self.ob["samples"] - st["next"])

    def finish(self, st) -> list:
        binom = self.ob["name"] in ("one_arm", "size_tail", "long_edge")
        meta = {"observable": self.ob["name"], "p": self.p, **st["extra"]}
        return [CurvePoint(g, _mean_estimate(st["n"], st["s"][j], st["ss"][j], self.seed, {**meta, "x": g}, binom))
                for j, g in enumerate(self.grid)]


class _OneArm(_Runner):
    def step(self, st):
        n = self._count(st)
        b = self.model().batch(self.seed, st["next"], n, BatchRequest(exit_radius=max(self.grid)))
        self._add_columns(st, np.stack([b.exited_radius(r) for r in self.grid], axis=1).astype(np.int64))
        st["next"] += n


class _SizeTail(_Runner):
    def step(self, st):
        n = self._count(st)
        b = self.model().batch(self.seed, st["next"], n, BatchRequest(size_cap=int(max(self.grid))))
        self._add_columns(st, np.stack([b.size >= int(s) for s in self.grid], axis=1).astype(np.int64))
        st["next"] += n


class _BallVolume(_Runner):
    def step(self, st):
        from percolab.observables import DEFAULT_CAP, run_escalated
        n = self._count(st)
        _, vals, elog = run_escalated(self.model(), self.seed, n, BatchRequest(radii=tuple(self.grid)),
                                      lambda b: b.ball, self.ob.get("cap", DEFAULT_CAP), start=st["next"])
        self._add_columns(st, vals.astype(np.int64))
        st["extra"].setdefault("escalation_reruns", 0)
        st["extra"]["escalation_reruns"] += int(sum(elog.rerun))
        st["next"] += n


class _LongEdge(_Runner):
    """Lower bound ``P(|C_r(0)| >= k, some edge longer than 2r leaves C_r(0))`` per radius."""

    def __init__(self, ob, kernel, p, *a, **kw):
        super().__init__(ob, kernel, p, *a, **kw)
        self.k = int(ob.get("k", 1))
        if kernel.family is Family.LONG_RANGE:
            for r in self.grid:
                bound = (2 * r) ** kernel.alpha / truncation_tail_constant(kernel, [r, 2 * r, 4 * r])
                if not self.k < bound:
                    raise ConfigError(f"config error at observables: k = {self.k} needs k < {bound:.3g} at r = {r:g}")

    def step(self, st):
        n = self._count(st)
        cols = []
        for r in self.grid:
            trunc = r if r < self.kernel.max_displacement else None
            m = LatticeModel(self.kernel, self.p, truncation=trunc, workers=self.workers)
            b = m.batch(self.seed, st["next"], n, BatchRequest(long_radius=2 * r))
            cols.append((b.size >= self.k) & b.long_edge)
        self._add_columns(st, np.stack(cols, axis=1).astype(np.int64))
        st["next"] += n


class _SecondMoment(_Runner):
    def fresh(self):
        k = len(self.grid)
        return {"next": 0, "n": 0, "m": [[0, 0, 0, 0] for _ in range(k)], "extra": {}}

    def step(self, st):
        from percolab.observables import DEFAULT_CAP, run_escalated
        n = self._count(st)
        nf = float(self.ob.get("n_factor", 2.0))
        radii = tuple(x for r in self.grid for x in (r, nf * r))
        _, vals, _ = run_escalated(self.model(), self.seed, n, BatchRequest(radii=radii), lambda b: b.ball,
                                   self.ob.get("cap", DEFAULT_CAP), start=st["next"])
        vals = vals.astype(np.int64)
        for j in range(len(self.grid)):
            N = vals[:, 2 * j + 1] - vals[:, 2 * j]
            for q in range(4):
                st["m"][j][q] += _isum(N, q + 1)
        st["n"] += n
        st["next"] += n

    def finish(self, st):
        n = st["n"]
        out = []
        for j, r in enumerate(self.grid):
            s1, s2, s3, s4 = (Fraction(v) for v in st["m"][j])
            m1, m2 = s1 / n, s2 / n
            v1 = (s2 - s1 * s1 / n) / (n - 1)
            v2 = (s4 - s2 * s2 / n) / (n - 1)
            c12 = (s3 - s1 * s2 / n) / (n - 1)
            se2 = math.sqrt(max(float(v2 / n), 0.0))
            if m2 <= 0 or (se2 > 0 and float(m2) <= 2 * se2):
                raise EstimatorError(f"second moment at r = {r}: E[N^2] is consistent with zero")
            ratio = m1 * m1 / m2
            g1, g2 = 2 * m1 / m2, -m1 * m1 / (m2 * m2)
            var = (g1 * g1 * v1 + 2 * g1 * g2 * c12 + g2 * g2 * v2) / n
            meta = {"observable": "second_moment", "r": r, "p": self.p, "E[N]": float(m1), "E[N^2]": float(m2)}
            out.append(CurvePoint(r, EstimateWithError(float(ratio), math.sqrt(max(float(var), 0.0)), n,
                                                       self.seed, meta)))
        return out


class _IICVolume(_Runner):
    def fresh(self):
        k = len(self.grid)
        return {"next": 0, "n": 0, "w": [0, 0], "f": [[0, 0, 0] for _ in range(k)], "extra": {}}

    def step(self, st):
        from percolab.iic import _complete_clusters
        from percolab.observables import DEFAULT_CAP
        n = self._count(st)
        p_sub = self.p * (1.0 - 2.0 * self.pc_stderr / self.p) if self.p > 0 else 0.0
        b, _, _ = _complete_clusters(self.model(p_sub), self.seed, n, BatchRequest(radii=tuple(self.grid)),
                                     self.ob.get("cap", DEFAULT_CAP), start=st["next"])
        w = b.size.astype(np.int64)
        st["w"][0] += _isum(w)
        st["w"][1] += _isum(w, 2)
        for j in range(len(self.grid)):
            f = b.ball[:, j].astype(np.int64)
            st["f"][j][0] += _isum(w * f)
            st["f"][j][1] += _isum(w * w * f)
            st["f"][j][2] += sum((int(a) * int(c)) ** 2 for a, c in zip(w.tolist(), f.tolist()))
        st["extra"]["p_used"] = p_sub
        st["n"] += n
        st["next"] += n

    def finish(self, st):
        n = st["n"]
        sw, sw2 = Fraction(st["w"][0]), Fraction(st["w"][1])
        ess = float(sw * sw / sw2)
        if ess < 100:
            raise EstimatorError(f"size-biased effective sample size {ess:.1f} < 100")
        out = []
        for j, r in enumerate(self.grid):
            swf, sw2f, sw2f2 = (Fraction(v) for v in st["f"][j])
            R = swf / sw
            q = sw2f2 - 2 * R * sw2f + R * R * sw2
            se = math.sqrt(max(float(q * n / (n - 1)), 0.0)) / float(sw)
            meta = {"observable": "iic_volume", "r": r, "p": st["extra"].get("p_used", self.p), "ess": ess}
            out.append(CurvePoint(r, EstimateWithError(float(R), se, n, self.seed, meta)))
        return out


class _Backbone(_Runner):
    def fresh(self):
        k = len(self.grid)
        return {"next": 0, "n": 0, "s": [0] * k, "ss": [0] * k,
                "extra": {"undecided": 0, "classified": 0, "proposed": 0}}

    def done(self, st):
        return st["n"] >= self.ob["accepted"]

    def step(self, st):
        from percolab.backbone import backbone_report, verify_pivotal
        R = float(self.ob.get("R_factor", 4.0)) * max(self.grid)
        floor = float(self.ob.get("floor", 1e-6))
        if self.p <= 0:
            raise BudgetExceeded("acceptance probability is zero at p = 0")
        ex = st["extra"]
        if ex["proposed"] >= 10.0 / floor and st["n"] < floor * ex["proposed"]:
            raise BudgetExceeded(f"acceptance rate below floor {floor:g}")
        model = self.model()
        n = self.chunk
        b = model.batch(self.seed, st["next"], n, BatchRequest(exit_radius=R))
        idx = (st["next"] + np.flatnonzero(b.exited)).tolist()
        need = self.ob["accepted"] - st["n"]
        if len(idx) > need:
            idx = idx[:need]
            used = idx[-1] + 1 - st["next"]
        else:
            used = n
        rows = []
        for i in idx:
            cl = model.explore(EdgeCoinSource(self.seed, i), RadiusCap(R))
            rep = backbone_report(cl, R, self.grid)
            rows.append([rep.n_bb_by_radius[r] for r in self.grid])
            ex["undecided"] += len(rep.undecided)
            ex["classified"] += rep.n_classified
            if i % 100 == 0 and not verify_pivotal(cl, R, rep.pivotal_edges):
                raise AssertionError(f"pivotal re-check failed on sample {i}")
        if rows:
            self._add_columns(st, np.array(rows, dtype=np.int64))
        ex["proposed"] += used
        st["next"] += n

    def finish(self, st):
        ex = st["extra"]
        rate = ex["undecided"] / ex["classified"] if ex["classified"] else 0.0
        ex["undecided_rate"] = rate
        ex["valid"] = rate <= 1e-3
        ex["acceptance_rate"] = st["n"] / ex["proposed"] if ex["proposed"] else 0.0
        return super().finish(st)


RUNNERS = {"one_arm": _OneArm, "size_tail": _SizeTail, "ball_volume": _BallVolume,
           "second_moment": _SecondMoment, "long_edge": _LongEdge, "iic_volume": _IICVolume,
           "backbone": _Backbone}


# ---------------------------------------------------------------------- #
# experiment

def search_pc(kernel, method, seed, workers, r_pair=None, tol=None, budget=20000, bracket=None,
              p_grid=None, max_iterations=40):
    if method == "susceptibility":
        from percolab.observables import estimate_pc_susceptibility
        return estimate_pc_susceptibility(kernel, p_grid, budget, seed, workers=workers)
    if r_pair is None or len(r_pair) != 2:
        raise ConfigError("the crossing method needs two radii")
    return estimate_pc(kernel, tuple(r_pair), tol, budget, seed, bracket=tuple(bracket) if bracket else None,
                       max_iterations=max_iterations, workers=workers)


def _pc_info(res) -> dict:
    return {"p_hat": res.estimate.value, "stderr": res.estimate.stderr, "iterations": res.iterations,
            "samples_used": res.samples_used, "meta": res.estimate.meta, "history": res.history}


def resolve_p(cfg, kernel, seed, workers, state) -> tuple:
    p = cfg["p"]
    if p["mode"] == "fixed":
        return float(p["value"]), float(p.get("stderr", 0.0)), None
    if "pc" in state:
        return state["pc"]["p_hat"], state["pc"]["stderr"], state["pc"]
    res = search_pc(kernel, p.get("method", "crossing"), seed, workers, r_pair=p.get("r_pair"),
                    tol=p.get("tol"), budget=p["budget"], bracket=p.get("bracket"), p_grid=p.get("p_grid"),
                    max_iterations=p.get("max_iterations", 40))
    info = _pc_info(res)
    state["pc"] = info
    return info["p_hat"], info["stderr"], info


def run_experiment(cfg: dict, out_dir=None, workers: int | None = None, seed: int | None = None,
                   fresh: bool = False, max_chunks: int | None = None) -> dict:
    """Run every configured observable, writing one CSV each plus ``manifest.json``.

    Progress is checkpointed after every chunk of sample indices; a rerun
    with the same configuration continues from the checkpoint and gives the
    same bytes as an uninterrupted run.  ``max_chunks`` stops early (used to
    exercise resumption).
    """
    cfg = validate_config(cfg)
    if seed is not None:
        cfg["seed"] = int(seed)
    cfg.setdefault("seed", 0)
    cfg.setdefault("chunk", DEFAULT_CHUNK)
    cfg.setdefault("observables", [])
    workers = int(workers or cfg.get("workers", 1))
    out = Path(out_dir or cfg.get("out") or ".")
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    digest = config_digest(cfg)
    ck_path = out / "checkpoint.json"
    state = {"digest": digest, "observables": {}}
    if ck_path.exists() and not fresh:
        saved = json.loads(ck_path.read_text())
        if saved.get("digest") != digest:
            raise ConfigError(f"checkpoint in {out} was written for a different configuration; "
                              "use --fresh to discard it")
        state = saved
    kernel = kernel_from_config(cfg["kernel"])
    seed_ = int(cfg["seed"])
    manifest = {"config": cfg, "version": __version__, "config_digest": digest, "outputs": {},
                "status": "running"}
    chunks = 0
    try:
        p, p_se, pc_info = resolve_p(cfg, kernel, seed_, workers, state)
        _atomic_json(ck_path, state)
        manifest["p"] = {"mode": cfg["p"]["mode"], "value": p, "stderr": p_se}
        if pc_info:
            manifest["p"]["search"] = {k: v for k, v in pc_info.items() if k != "history"}
        for ob in cfg["observables"]:
            runner = RUNNERS[ob["name"]](ob, kernel, p, seed_, workers, int(cfg["chunk"]), p_se)
            st = state["observables"].get(ob["label"]) or runner.fresh()
            while not runner.done(st):
                if max_chunks is not None and chunks >= max_chunks:
                    manifest["status"] = "partial"
                    return _finish_manifest(manifest, out, t0)
                runner.step(st)
                chunks += 1
                state["observables"][ob["label"]] = st
                _atomic_json(ck_path, state)
            curve = runner.finish(st)
            rows = [(c.abscissa, c.value, c.stderr, c.estimate.n_samples) for c in curve]
            fname = f"{ob['label']}.csv"
            manifest["outputs"][ob["label"]] = {"file": fname, "sha256": _write_csv(out / fname, rows),
                                                "meta": st["extra"]}
        manifest["status"] = "complete"
        return _finish_manifest(manifest, out, t0)
    except PercolabError as exc:
        manifest["status"] = "failed"
        manifest["error"] = {"type": type(exc).__name__, "message": str(exc),
                             "partial": getattr(exc, "partial", None)}
        _finish_manifest(manifest, out, t0)
        raise


def _finish_manifest(manifest, out: Path, t0) -> dict:
    manifest["wall_time"] = time.time() - t0
    _atomic_json(out / "manifest.json", manifest)
    return manifest


# ---------------------------------------------------------------------- #
# argument parsing

def _json_arg(text):
    if text.startswith("@"):
        with open(text[1:]) as fh:
            return json.load(fh)
    return json.loads(text)


def _floats(text):
    return [float(x) for x in text.replace(",", " ").split()]


def _add_kernel_flags(ap):
    g = ap.add_argument_group("kernel")
    g.add_argument("--family", help="nn, frso or lrso")
    g.add_argument("-d", "--dim", type=int, help="lattice dimension")
    g.add_argument("-L", type=int, help="spread-out parameter")
    g.add_argument("--alpha", type=float, help="long-range exponent")
    g.add_argument("--trunc-radius", type=float, help="long-range truncation radius")


def _kernel_args(args, cfg):
    k = dict(cfg.get("kernel", {})) if cfg else {}
    for key, attr in (("family", "family"), ("d", "dim"), ("L", "L"), ("alpha", "alpha"),
                      ("trunc_radius", "trunc_radius")):
        val = getattr(args, attr, None)
        if val is not None:
            k[key] = val
    if "family" not in k or "d" not in k:
        raise ConfigError("kernel needs --family and -d (or a config file with a kernel section)")
    try:
        return kernel_from_config(k), k
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"invalid kernel: {exc}") from exc


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="JSON configuration file")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="master seed")
    common.add_argument("--workers", type=int, default=argparse.SUPPRESS, help="worker threads")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    ap = argparse.ArgumentParser(prog="percolab", description=__doc__.splitlines()[0], parents=[common])
    ap.set_defaults(config=None, seed=None, workers=None, out=None, verbose=False)
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("kernel-info", parents=[common], help="describe a kernel")
    _add_kernel_flags(s)

    s = sub.add_parser("pc-search", parents=[common], help="estimate p_c")
    _add_kernel_flags(s)
    s.add_argument("--method", choices=["crossing", "susceptibility"], default="crossing",
                   help="one-arm slope crossing, or linear extrapolation of 1/chi (mean-field kernels)")
    s.add_argument("--r-pair", type=_floats, help="radii for the crossing method")
    s.add_argument("--p-grid", type=_floats, help="subcritical p values for the susceptibility method")
    s.add_argument("--tol", type=float, default=1e-3)
    s.add_argument("--budget", type=int, default=20000)
    s.add_argument("--bracket", type=_floats)

    s = sub.add_parser("estimate", parents=[common], help="run the observables of a config file or of flags")
    _add_kernel_flags(s)
    s.add_argument("--observable", choices=[k.replace("_", "-") for k in _OBS_KINDS],
                   help="single observable (instead of --config)")
    s.add_argument("--grid", type=_floats, help="radii or sizes for --observable")
    s.add_argument("--samples", type=int, help="samples (accepted samples for backbone)")
    s.add_argument("--p", type=float, help="edge parameter p")
    s.add_argument("--k", type=int, help="size threshold for long-edge")
    s.add_argument("--fresh", action="store_true", help="ignore an existing checkpoint")
    s.add_argument("--max-chunks", type=int, help="stop after this many chunks (resume later)")

    s = sub.add_parser("iic-compare", parents=[common], help="compare the three IIC schemes")
    _add_kernel_flags(s)
    s.add_argument("--pc", type=float, required=True)
    s.add_argument("--pc-stderr", type=float, default=0.0)
    s.add_argument("--event", type=_json_arg, required=True, help="event spec (JSON or @file)")
    s.add_argument("--x-list", type=_json_arg, default=[])
    s.add_argument("--shell-list", type=_floats, default=[], help="shell radii (replaces --x-list)")
    s.add_argument("--p-list", type=_floats, default=[])
    s.add_argument("--r-list", type=_floats, default=[])
    s.add_argument("--budget", type=int, default=10000)
    s.add_argument("--max-proposals", type=int)
    s.add_argument("--floor", type=float, default=1e-6)

    s = sub.add_parser("backbone", parents=[common], help="IIC backbone-count curve")
    _add_kernel_flags(s)
    s.add_argument("--p", type=float, required=True)
    s.add_argument("--r-grid", type=_floats, required=True)
    s.add_argument("--R-factor", dest="R_factor", type=float, default=4.0)
    s.add_argument("--accepted", type=int, default=1000)

    s = sub.add_parser("diagrams", parents=[common], help="Fourier-space diagram numerics")
    _add_kernel_flags(s)
    s.add_argument("--op", required=True,
                   choices=["triangle", "open-triangle", "dhat-bounds", "smoothing-check", "volume-integral"])
    s.add_argument("--lambda", dest="lam", type=float, default=0.5)
    s.add_argument("--k-samples", type=int, default=100000)
    s.add_argument("--variant", choices=["g", "h"], default="g")
    s.add_argument("--r", type=float, default=8.0)
    s.add_argument("--points", type=int, default=1000)

    s = sub.add_parser("fit", parents=[common], help="fit power laws to observable CSVs")
    s.add_argument("csv", nargs="+")
    s.add_argument("--n-boot", type=int, default=2000)

    s = sub.add_parser("report", parents=[common], help="exponent report from a config file")

    s = sub.add_parser("oracle", parents=[common], help="exact enumeration on a small graph")
    s.add_argument("--graph", type=_json_arg, required=True, help="graph JSON (or @file)")
    s.add_argument("--event", type=_json_arg, required=True)
    s.add_argument("--condition", type=_json_arg)
    s.add_argument("--size-biased", action="store_true")
    return ap


def _emit(obj, args, name: str) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True, default=_jsonable)
    print(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / name).write_text(text + "\n")


def _seed(args, cfg) -> int:
    if args.seed is not None:
        return args.seed
    return int((cfg or {}).get("seed", 0))


def _workers(args, cfg) -> int:
    return int(args.workers or (cfg or {}).get("workers", 1))


# ---------------------------------------------------------------------- #
# commands

def cmd_kernel_info(args, cfg):
    kernel, _ = _kernel_args(args, cfg)
    _emit(kernel.describe(), args, "kernel.json")


def cmd_pc_search(args, cfg):
    kernel, _ = _kernel_args(args, cfg)
    if args.method == "susceptibility" and not args.p_grid:
        raise ConfigError("--p-grid is required with --method susceptibility")
    try:
        res = search_pc(kernel, args.method, _seed(args, cfg), _workers(args, cfg), r_pair=args.r_pair,
                        tol=args.tol, budget=args.budget, bracket=args.bracket, p_grid=args.p_grid)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    _emit(_pc_info(res), args, "pc.json")


def _config_from_flags(args) -> dict:
    if args.observable is None or args.grid is None or args.samples is None or args.p is None:
        raise ConfigError("estimate needs --config, or --observable with --grid, --samples and --p")
    _, k = _kernel_args(args, None)
    name = args.observable.replace("-", "_")
    ob = {"name": name, "grid": args.grid, ("accepted" if name == "backbone" else "samples"): args.samples}
    if args.k is not None:
        ob["k"] = args.k
    cfg = {"kernel": k, "p": {"mode": "fixed", "value": args.p}, "observables": [ob]}
    return validate_config(cfg)


def cmd_estimate(args, cfg):
    if cfg is None:
        cfg = _config_from_flags(args)
    man = run_experiment(cfg, args.out, args.workers, args.seed, fresh=args.fresh, max_chunks=args.max_chunks)
    print(json.dumps({k: man[k] for k in ("status", "outputs", "p")}, indent=2, default=_jsonable))


def _event_from(spec, kernel):
    from percolab.iic import CylinderEvent
    try:
        return CylinderEvent.from_spec(spec, kernel)
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"invalid event spec: {exc}") from exc


def cmd_iic_compare(args, cfg):
    from percolab.iic import scheme_agreement
    kernel, _ = _kernel_args(args, cfg)
    event = _event_from(args.event, kernel)
    rep = scheme_agreement(kernel, args.pc, event,
                           {"x_list": args.x_list, "shell_list": args.shell_list, "p_list": args.p_list,
                            "r_list": args.r_list},
                           args.budget, _seed(args, cfg), pc_stderr=args.pc_stderr, floor=args.floor,
                           workers=_workers(args, cfg), max_proposals=args.max_proposals)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("scheme", "scale", "value", "stderr", "n_samples"))
        for sch, sc, v, se, n in rep.table():
            w.writerow([sch, json.dumps(sc), repr(v), repr(se), n])
        (out / "iic_compare.csv").write_text(buf.getvalue())
    _emit(rep.as_dict(), args, "iic_compare.json")


def cmd_backbone(args, cfg):
    from percolab.backbone import backbone_count_curve
    kernel, kcfg = _kernel_args(args, cfg)
    seed = _seed(args, cfg)
    t0 = time.time()
    curve = backbone_count_curve(kernel, args.p, args.r_grid, args.R_factor, args.accepted, seed,
                                 workers=_workers(args, cfg))
    meta = dict(curve[0].estimate.meta)
    meta.pop("r", None)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    rows = [(c.abscissa, c.value, c.stderr, c.estimate.n_samples) for c in curve]
    digest = _write_csv(out / "backbone.csv", rows)
    man = {"kernel": kcfg, "p": args.p, "seed": seed, "R_factor": args.R_factor, "accepted": args.accepted,
           "version": __version__, "wall_time": time.time() - t0,
           "outputs": {"backbone": {"file": "backbone.csv", "sha256": digest}}, "statistics": meta}
    _atomic_json(out / "manifest.json", man)
    print(json.dumps(man, indent=2, default=_jsonable))


def cmd_diagrams(args, cfg):
    from percolab import diagrams as dg
    seed = _seed(args, cfg)
    if args.op == "smoothing-check":
        d = args.dim or (cfg or {}).get("kernel", {}).get("d")
        if d is None:
            raise ConfigError("smoothing-check needs -d")
        try:
            sk = dg.SmoothingKernel(args.variant, args.r, int(d))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        _emit(dg.smoothing_kernel_check(sk, args.points, seed).as_dict(), args, "diagrams.json")
        return
    kernel, _ = _kernel_args(args, cfg)
    if args.op == "dhat-bounds":
        _emit(dg.dhat_bound_report(kernel, args.k_samples, seed).as_dict(), args, "diagrams.json")
        return
    try:
        proxy = dg.ProxyGreen(kernel, args.lam)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if args.op == "triangle":
        est = dg.triangle_estimate(proxy, args.k_samples, seed)
    elif args.op == "open-triangle":
        est = dg.open_triangle_bound(proxy, args.k_samples, seed)
    else:
        est = dg.proxy_volume_integral(proxy, dg.SmoothingKernel(args.variant, args.r, kernel.d),
                                       args.k_samples, seed)
    _emit(est.to_dict(), args, "diagrams.json")


def read_curve_csv(path):
    from percolab.scaling import curve_from_rows
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != CSV_HEADER:
        raise ConfigError(f"{path}: expected header {','.join(CSV_HEADER)}")
    return curve_from_rows(rows[1:])


def cmd_fit(args, cfg):
    from percolab.scaling import fit_power_law
    out = {}
    for path in args.csv:
        try:
            out[path] = fit_power_law(read_curve_csv(path), n_boot=args.n_boot, seed=_seed(args, cfg)).as_dict()
        except ValueError as exc:
            raise EstimatorError(f"{path}: {exc}") from exc
    _emit(out, args, "fit.json")


def cmd_report(args, cfg):
    from percolab.scaling import exponent_report
    if cfg is None:
        raise ConfigError("report needs --config")
    kernel = kernel_from_config(cfg["kernel"])
    seed = _seed(args, cfg)
    workers = _workers(args, cfg)
    state = {}
    p, p_se, _ = resolve_p(cfg, kernel, seed, workers, state)
    rc = cfg.get("report", {})
    unknown = set(rc) - {"budget", "observables", "grids", "R_factor"}
    if unknown:
        raise ConfigError(f"config error at report: unknown keys {sorted(unknown)}")
    rep = exponent_report(kernel, p, rc.get("budget", 10000), seed, pc_stderr=p_se,
                          observables=rc.get("observables"), grids=rc.get("grids"),
                          R_factor=rc.get("R_factor", 4.0), workers=workers)
    out = Path(args.out or cfg.get("out") or ".")
    out.mkdir(parents=True, exist_ok=True)
    digests = {}
    for name, curve in rep.curves.items():
        digests[name] = _write_csv(out / f"{name}.csv",
                                   [(c.abscissa, c.value, c.stderr, c.estimate.n_samples) for c in curve])
    body = rep.as_dict()
    body["pc_stderr"] = p_se
    body["digests"] = digests
    _atomic_json(out / "report.json", body)
    print(json.dumps({k: body[k] for k in ("passed", "flags")} |
                     {"checks": {k: v["passed"] for k, v in body["checks"].items()}}, indent=2))


def _tuplify(x):
    if isinstance(x, list):
        return tuple(_tuplify(v) for v in x)
    return x


def _graph_from_json(spec):
    from percolab.oracle import FiniteGraphSpec
    try:
        edges = [(_tuplify(a), _tuplify(b)) for a, b in spec["edges"]]
        probs = spec["probs"]
        if isinstance(probs, (int, float)):
            probs = [float(probs)] * len(edges)
        verts = [_tuplify(v) for v in spec["vertices"]] if "vertices" in spec else None
        return FiniteGraphSpec.build(edges, probs, origin=_tuplify(spec.get("origin", 0)),
                                     boundary=[_tuplify(b) for b in spec.get("boundary", [])], vertices=verts)
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"invalid graph: {exc}") from exc


def _oracle_event(spec, g, en):
    kind = spec.get("type")
    if kind == "connected":
        return en.connected(_tuplify(spec["x"]))
    if kind == "boundary":
        return en.reaches_boundary()
    if kind == "size-at-least":
        return en.cluster_size() >= int(spec["k"])
    if kind == "always":
        return np.ones(len(en.configs), dtype=bool)
    from percolab.iic import CylinderEvent
    try:
        if kind == "edge-open":
            ev = CylinderEvent.edge_open(*[_tuplify(v) for v in spec["edge"]])
        elif kind == "dnf":
            ev = CylinderEvent.from_dnf([(_tuplify(a), _tuplify(b)) for a, b in spec["edges"]], spec["clauses"])
        else:
            raise ValueError(f"unknown event type {kind!r}")
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"invalid event spec: {exc}") from exc
    return ev.oracle_mask(en)


def cmd_oracle(args, cfg):
    from percolab.oracle import Enumeration
    g = _graph_from_json(args.graph)
    en = Enumeration(g)
    F = _oracle_event(args.event, g, en)
    res = {"n_edges": len(g.edges), "n_configurations": len(en.configs), "P(F)": en.probability(F)}
    if args.condition is not None:
        C = _oracle_event(args.condition, g, en)
        pc = en.probability(C)
        if pc <= 0:
            raise EstimatorError("conditioning event has probability zero")
        res["P(C)"] = pc
        res["P(F|C)"] = en.probability(F & C) / pc
    if args.size_biased:
        size = en.cluster_size().astype(float)
        res["Q(F)"] = en.expectation(F * size) / en.expectation(size)
    _emit(res, args, "oracle.json")


COMMANDS = {"kernel-info": cmd_kernel_info, "pc-search": cmd_pc_search, "estimate": cmd_estimate,
            "iic-compare": cmd_iic_compare, "backbone": cmd_backbone, "diagrams": cmd_diagrams,
            "fit": cmd_fit, "report": cmd_report, "oracle": cmd_oracle}


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config) if args.config else None
        COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except BudgetExceeded as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return 4
    except PercolabError as exc:
        print(f"estimator error: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        print(f"error: invalid argument: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
