"""Stage orchestration: orbits, frames, alphabet, chains, coding, cover and reports."""

from __future__ import annotations

import json
import math
import platform
import time
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from pathlib import Path

import matplotlib
import numpy as np
import scipy

from . import __version__
from . import report as rp
from .chains import (build_alphabet, build_graph, graph_export, orbit_segment, orbit_to_chain,
                     stationary_chart)
from .charts import block_form_report, chart_frames, q_size
from .coding import (box_confinement_point, code_point, equivariance_defect, hoelder_modulus, inverse_diagnostics,
                     orthogonal_net, splice_chain)
from .config import RunConfig
from .cover import (bracket_uniqueness, build_cover, cell_sample_chains, commuting_residual,
                    local_finiteness_census, markov_property_check, smale_bracket)
from .errors import ConfigError, PesinError, SplicingImpossible
from .manifolds import admissibility, contraction_trace, local_manifold, stays_in_windows_check
from .system import SmoothSystem, distance, make_builtin, oseledets_batch

LEAD = 60
HALF_WINDOW = 32
TRANSLATIONS_2D = [(1, 0), (1, 1), (0, 1), (1, -1), (2, 1), (1, 2)]
GEOMETRY_STAGES = ("chains", "coding", "graph", "inverse", "hoelder", "cover", "transform")
SUITES = ("frames", "transform", "coding", "inverse", "markov")


@dataclass
class Check:
    name: str
    measured: float
    bound: float
    ok: bool
    stage: str

    def row(self) -> dict:
        return {"name": self.name, "measured": self.measured, "bound": self.bound, "ok": self.ok,
                "stage": self.stage}


@dataclass
class Run:
    cfg: RunConfig
    out: Path | None = None
    checks: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    files: list = field(default_factory=list)
    cache: dict = field(default_factory=dict)
    current: str = ""

    def __post_init__(self):
        try:
            self.system: SmoothSystem = make_builtin(self.cfg.system_label)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        self.system = _with_beta(self.system, self.cfg.beta)
        self.header = self.cfg.header()
        if self.out is not None:
            self.out.mkdir(parents=True, exist_ok=True)

    # bookkeeping -----------------------------------------------------------

    def check(self, name: str, measured, bound, ok: bool | None = None):
        measured, bound = float(measured), float(bound)
        ok = bool(measured <= bound) if ok is None else bool(ok)
        self.checks.append(Check(name, measured, bound, ok, self.current))
        return ok

    @contextmanager
    def stage(self, name: str):
        if name in GEOMETRY_STAGES and self.cfg.mode == "literal":
            exc = ConfigError(f"stage {name} needs practical mode: literal chart sizes underflow")
            exc.stage = name
            raise exc
        prev, self.current = self.current, name
        t0 = time.perf_counter()
        try:
            yield
        except PesinError as exc:
            if not getattr(exc, "stage", None):
                exc.stage = name
            raise
        finally:
            self.timings[name] = self.timings.get(name, 0.0) + time.perf_counter() - t0
            self.current = prev

    def path(self, name: str) -> Path | None:
        if self.out is None:
            return None
        p = self.out / name
        self.files.append(name)
        return p

    @property
    def passed(self) -> bool:
        return all(c.ok for c in self.checks)

    def memo(self, key, fn):
        if key not in self.cache:
            self.cache[key] = fn()
        return self.cache[key]


def _with_beta(system: SmoothSystem, beta: float) -> SmoothSystem:
    return system if beta == system.beta else replace(system, beta=beta)


def versions() -> dict:
    return {"pesinchart": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "matplotlib": matplotlib.__version__}


# stages ------------------------------------------------------------------------

def _ext(cfg: RunConfig) -> int:
    return cfg.chain_half + LEAD + HALF_WINDOW


def orbits(run: Run) -> dict:
    def build():
        cfg, system = run.cfg, run.system
        rng = cfg.rng("orbits")
        starts = rng.random((cfg.n_orbits, system.dim))
        ext = _ext(cfg)
        segs = [orbit_segment(system, x0, -ext, cfg.orbit_len - 1 + ext) for x0 in starts]
        samples = [seg[ext:ext + cfg.orbit_len] for seg in segs]
        return {"starts": starts, "segments": segs, "samples": samples, "ext": ext}
    with run.stage("orbits"):
        return run.memo("orbits", build)


def exponents(run: Run) -> list[dict]:
    data = orbits(run)
    cfg, system = run.cfg, run.system
    with run.stage("exponents"):
        if "exponents" in run.cache:
            return run.cache["exponents"]
        splits = oseledets_batch(system, data["starts"], cfg.window, chi_floor=cfg.chi)
        rows = [{"orbit": i, "point": sp.point, "exponents": sp.exponents, "s_index": sp.s_index,
                 "residual": sp.residual} for i, sp in enumerate(splits)]
        if system.is_linear:
            oracle = np.sort(np.log(np.abs(np.linalg.eigvals(system.linear_part))))[::-1]
            err = max(float(np.max(np.abs(np.sort(r["exponents"])[::-1] - oracle))) for r in rows)
            run.check("exponents.closed_form", err, cfg.tolerances["exponent"])
        run.check("exponents.hyperbolic", -min(float(np.min(np.abs(r["exponents"]))) for r in rows), -cfg.chi)
        run.cache["exponents"] = rows
        return rows


def frames(run: Run) -> list[dict]:
    data = orbits(run)
    cfg, system = run.cfg, run.system
    with run.stage("frames"):
        if "frames" in run.cache:
            return run.cache["frames"]
        rows, worst = [], {}
        all_frames = []
        for i, samp in enumerate(data["samples"]):
            nxt = np.concatenate([samp, system.map(samp[-1:])])
            frs = chart_frames(system, nxt, cfg.chi, cfg.window)
            all_frames.append(frs[:-1])
            for k in range(len(samp)):
                rep = block_form_report(system, frs[k], frs[k + 1], cfg.tolerances["off_block"])
                q = q_size(frs[k], cfg.epsilon, system.beta, cfg.constants)
                for name, r in rep.items():
                    w = worst.setdefault(name, r)
                    if r["measured"] - r["bound"] > w["measured"] - w["bound"]:
                        worst[name] = r
                rows.append({"orbit": i, "index": k, "point": frs[k].point, "s_index": frs[k].s_index,
                             "c_inv_norm": frs[k].c_inv_norm, "kappa": frs[k].kappa,
                             "truncation": frs[k].truncation, "ell_q": q.ell,
                             "off_block": rep["off_block"]["measured"], "ds_norm": rep["ds_norm"]["measured"],
                             "du_inv_norm": rep["du_inv_norm"]["measured"]})
        for name, r in sorted(worst.items()):
            run.check(f"frames.{name}", r["measured"], r["bound"])
        run.cache["frames"] = rows
        run.cache["frame_objs"] = all_frames
        return rows


def alphabet(run: Run, stream: str = "alphabet"):
    data = orbits(run)
    cfg, system = run.cfg, run.system
    with run.stage("alphabet"):
        return run.memo(stream, lambda: build_alphabet(
            system, np.concatenate(data["samples"]), cfg.epsilon, cfg.chi, cfg.delta_x, cfg.delta_c,
            cfg.rng(stream), cfg.constants, window=cfg.window))


def _chain_centers(cfg: RunConfig, ext: int) -> list[int]:
    per = cfg.coded_per_orbit
    return [ext + int((j + 0.5) * cfg.orbit_len / per) for j in range(per)]


def chains(run: Run) -> list:
    data = orbits(run)
    alph = alphabet(run)
    cfg, system = run.cfg, run.system
    with run.stage("chains"):
        if "chains" in run.cache:
            return run.cache["chains"]
        out = []
        for i, seg in enumerate(data["segments"]):
            for c in _chain_centers(cfg, data["ext"]):
                out.append((i, c, orbit_to_chain(system, alph, seg, c, cfg.chain_half, LEAD, HALF_WINDOW)))
        run.check("chains.ledger_ratio", 0, 0, all(ch.ledger_ratio_ok() for _, _, ch in out))
        run.cache["chains"] = out
        return out


def coding(run: Run) -> list[dict]:
    chs = chains(run)
    cfg, system = run.cfg, run.system
    with run.stage("coding"):
        if "coding" in run.cache:
            return run.cache["coding"]
        rows, coded = [], []
        for j, (i, c, ch) in enumerate(chs):
            cp = code_point(system, ch, cfg.iters, grid_res=cfg.grid_res)
            shifted = code_point(system, ch.shift(1), cfg.iters, grid_res=cfg.grid_res)
            defect = equivariance_defect(system, cp, cfg.iters, shifted)
            coded.append(cp)
            rows.append({"chain": j, "orbit": i, "index": c - orbits(run)["ext"], "point": cp.point,
                         "coords": cp.coords, "residual": cp.residual, "in_box": cp.in_box,
                         "orbit_distance": float(distance(cp.point, ch.points[ch.center])),
                         "shift_defect": defect, "tagged": ch.recurrence_tags() is not None})
        tol = cfg.tolerances["equivariance"]
        if system.is_linear:
            tol = min(tol, 1e-8)
        run.check("coding.equivariance", max(r["shift_defect"] for r in rows), tol)
        run.check("coding.in_box", 0, 0, all(r["in_box"] for r in rows))
        run.check("coding.shadowing", max(r["orbit_distance"] for r in rows), cfg.tolerances["same_point"])
        run.cache["coding"] = rows
        run.cache["coded"] = coded
        return rows


def inverse(run: Run) -> list[dict]:
    data = orbits(run)
    chs = chains(run)
    alph2 = alphabet(run, "alphabet2")
    coding(run)
    cfg, system = run.cfg, run.system
    with run.stage("inverse"):
        if "inverse" in run.cache:
            return run.cache["inverse"]
        i, c, ch1 = chs[0]
        ch2 = orbit_to_chain(system, alph2, data["segments"][i], c, cfg.chain_half, LEAD, HALF_WINDOW)
        cp1 = run.cache["coded"][0]
        cp2 = code_point(system, ch2, cfg.iters, grid_res=cfg.grid_res)
        net = orthogonal_net(system.dim, 0.5 * cfg.epsilon ** (1 / 3), cfg.rng("net"))
        recs = inverse_diagnostics(system, ch1, ch2, cp1.point, cp2.point, cfg.tolerances["same_point"], net)
        rows = []
        for r in recs:
            rows.append({"index": r.index, "distance": r.distance, "distance_bound": r.distance_bound,
                         "ell_s_diff": r.ell_s_diff, "ell_u_diff": r.ell_u_diff, "ell_bound": r.ell_bound,
                         "r_minus_id": r.r_minus_id, "r_bound": r.r_bound, "translation": r.translation,
                         "translation_bound": r.translation_bound, "remainder": r.remainder_derivative,
                         "remainder_bound": r.remainder_bound, "frame_ratio": r.frame_ratio,
                         "frame_bound": r.frame_bound, "net_snap": r.snap_distance, "ok": r.ok})
        for flag in recs[0].flags:
            run.check(f"inverse.{flag}", sum(not r.flags[flag] for r in recs), 0)
        run.cache["inverse"] = rows
        return rows


def hoelder(run: Run, ns=range(2, 11)) -> list[dict]:
    chs = chains(run)
    alph = alphabet(run)
    cfg, system = run.cfg, run.system
    with run.stage("hoelder"):
        if "hoelder" in run.cache:
            return run.cache["hoelder"]
        ch = chs[0][2]
        spliced = {}
        for n in ns:
            try:
                spliced[n] = splice_chain(system, alph, ch, n)
            except SplicingImpossible:
                continue
        rows = hoelder_modulus(system, ch, spliced, cfg.iters, cfg.grid_res)
        rate = math.exp(-cfg.chi / 2)
        ratios = [b["c0"] / a["c0"] for a, b in zip(rows[:-1], rows[1:]) if b["n"] == a["n"] + 1 and a["c0"] > 0]
        run.check("hoelder.rate", max(ratios) if ratios else math.inf, rate, bool(ratios) and max(ratios) <= rate)
        run.cache["hoelder"] = rows
        return rows


def transform(run: Run) -> dict:
    cfg, system = run.cfg, run.system
    with run.stage("transform"):
        if "transform" in run.cache:
            return run.cache["transform"]
        v = stationary_chart(system, np.zeros(system.dim), cfg.chi, cfg.epsilon, cfg.constants)
        eta = v.eta.value
        grid = cfg.grid_res if system.dim == 2 else min(cfg.grid_res, 9)
        rate = math.exp(-cfg.chi / 2) * 1.02

        def seed_b(t):
            out_dim = system.dim - t.shape[1]
            return np.repeat(0.4e-3 * eta + 0.05 * eta ** (1 / 3) * t[:, :1], out_dim, axis=1)

        out = {}
        for kind in ("u", "s"):
            tr = contraction_trace(system, [v] * (cfg.steps + 1), kind, [None, seed_b], grid)
            rec_ok = all(all(x[2] for x in rep.recurrences.values()) and rep.converged
                         for step in tr["reports"] for rep in step)
            run.check(f"transform.{kind}_ratio", max(tr["ratios"]), rate)
            run.check(f"transform.{kind}_recurrences", 0, 0, rec_ok)
            adm = admissibility(tr["manifolds"][0], cfg.epsilon)
            run.check(f"transform.{kind}_admissible", 0, 0, adm["admissible"])
            out[kind] = {"ratios": tr["ratios"], "distances": tr["distances"]}
        man = local_manifold(system, [v] * (2 * cfg.iters + 1), "s", cfg.iters, grid_res=grid).manifold
        stay = stays_in_windows_check(system, man, [v] * (2 * cfg.iters + 1))
        run.check("transform.stays_in_boxes", max(stay["ratios"]), 1.0)
        if system.dim == 2:
            ts = np.linspace(-man.repr.radius, man.repr.radius, 9)
            box = np.array([box_confinement_point(system, v, t) for t in ts])
            gt = man.repr.evaluate(ts[:, None])[0][:, 0]
            run.check("transform.box_oracle", float(np.max(np.abs(box - gt))), 1e-4)
            out["oracle"] = {"t": ts, "box": box, "graph": gt}
        out["manifold"] = man
        run.cache["transform"] = out
        return out


def cover(run: Run) -> dict | None:
    alph = alphabet(run)
    cfg, system = run.cfg, run.system
    with run.stage("cover"):
        if "cover" in run.cache:
            return run.cache["cover"]
        if system.dim != 2:
            run.cache["cover"] = None
            return None
        tol = cfg.tolerances
        # long enough for an excursion to settle back into the base cell on both sides
        n = 2 * cfg.cover_iters + 4
        it = cfg.cover_iters
        chs = cell_sample_chains(system, alph, np.zeros(2), TRANSLATIONS_2D[:cfg.translations], n)
        coded = [code_point(system, ch, it, grid_res=cfg.grid_res) for ch in chs]
        shifted = [code_point(system, ch.shift(1), it, grid_res=cfg.grid_res) for ch in chs]
        cells0, leaf = build_cover(coded, tol["leaf"])
        cells1, leaf1 = build_cover(shifted, tol["leaf"])
        run.check("cover.leaf_independence", max(leaf["max_vs_distance"], leaf1["max_vs_distance"]), tol["leaf"])
        run.check("cover.member_in_box", 0, 0, all(m.in_box for c in cells0 + cells1 for m in c.members))
        by_key = {c.key: c for c in cells1}
        main = max(cells0, key=lambda c: len(c.members))
        idem = max(float(distance(smale_bracket(main, x, x).bracket, x.point)) for x in main.members)
        run.check("cover.idempotence", idem, tol["idempotence"])
        rng = cfg.rng("multistart")
        pairs = [(a, b) for a in main.members for b in main.members if a is not b]
        spread = max((bracket_uniqueness(main, a, b, rng) for a, b in pairs[:10]), default=0.0)
        run.check("cover.bracket_uniqueness", spread, 1e-13)
        in_box = all(smale_bracket(main, a, b).in_box for a, b in pairs)
        run.check("cover.bracket_in_box", 0, 0, in_box)
        image = {id(c): s for c, s in zip(coded, shifted)}
        comm, applicable = 0.0, 0
        for a, b in pairs:
            fa, fb = image[id(a)], image[id(b)]
            z1 = by_key.get(fa.chain[0].ident())
            if z1 is None or fb.chain[0].ident() != z1.key:
                continue
            if not (any(m is fa for m in z1.members) and any(m is fb for m in z1.members)):
                continue
            comm = max(comm, commuting_residual(system, main, z1, a, b, fa, fb))
            applicable += 1
        run.check("cover.commuting", comm, tol["commuting"], applicable > 0 and comm <= tol["commuting"])
        markov = [markov_property_check(system, x, image[id(x)], tol["markov"], cfg.markov_samples)
                  for c in cells0 for x in c.members if image[id(x)].chain.recurrence_tags() is not None]
        total = sum(r[k]["samples"] for r in markov for k in ("s", "u"))
        passed = sum(r[k]["passed"] for r in markov for k in ("s", "u"))
        rate = passed / total if total else 0.0
        run.check("cover.markov_rate", -rate, -tol["markov_rate"])
        census = local_finiteness_census(cells0 + cells1, alph)
        run.check("cover.census_bound", sum(not r["ok"] for r in census), 0)
        run.check("cover.inclusion", 0, 0, all(r["inclusion"] for r in census))
        coded_rows = run.cache.get("coding")
        density = (sum(r["tagged"] for r in coded_rows) / len(coded_rows)) if coded_rows else float("nan")
        summary = {
            "cells": [{"cell": i, "point": c.vertex.point, "ell_q": c.vertex.q_eps.ell, "ell_s": c.vertex.p_s.ell,
                       "ell_u": c.vertex.p_u.ell, "members": len(c.members), "untagged": c.untagged}
                      for i, c in enumerate(cells0 + cells1)],
            "census": census,
            "markov": {"samples": total, "passed": passed, "rate": rate},
            "commuting": {"pairs": applicable, "max_residual": comm},
            "idempotence": idem, "bracket_spread": spread, "coverage_density": density,
        }
        out = {"summary": summary, "cells": cells0 + cells1, "main": main, "chains": chs}
        run.cache["cover"] = out
        return out


# exports -------------------------------------------------------------------------

def export_exponents(run: Run):
    rows = exponents(run)
    cols = ["orbit", "point", "exponents", "s_index", "residual"]
    rp.write_csv(run.path("exponents.csv"), run.header, cols, rows)


def export_frames(run: Run):
    rows = frames(run)
    cols = ["orbit", "index", "point", "s_index", "c_inv_norm", "kappa", "truncation", "ell_q", "off_block",
            "ds_norm", "du_inv_norm"]
    rp.write_csv(run.path("frames.csv"), run.header, cols, rows)


def export_chains(run: Run, extra=()):
    chs = chains(run)
    allc = [c for _, _, c in chs] + list(extra)
    graph = build_graph(run.system, allc, run.cfg.constants, alphabet(run).frames)
    header = {**run.header, "vertices": len(graph.vertices), "edges": graph.n_edges()}
    rp.write_text(run.path("graph.dot"), graph_export(graph, "dot", header))
    rp.write_text(run.path("graph.json"), graph_export(graph, "json", header))
    ids = {k: i for i, k in enumerate(graph.sorted_keys())}
    body = {"chains": [{"orbit": i, "center_index": c, **ch.to_json(ids)} for i, c, ch in chs]}
    rp.write_json(run.path("chains.json"), run.header, body)


def export_coding(run: Run):
    rows = coding(run)
    cols = ["chain", "orbit", "index", "point", "coords", "residual", "in_box", "orbit_distance", "shift_defect",
            "tagged"]
    rp.write_csv(run.path("coded.csv"), run.header, cols, rows)


def export_inverse(run: Run):
    rows = inverse(run)
    cols = list(rows[0].keys())
    rp.write_csv(run.path("inverse.csv"), run.header, cols, rows)


def export_hoelder(run: Run):
    rows = hoelder(run)
    rp.write_csv(run.path("hoelder.csv"), run.header, ["n", "c0", "c1"], rows)


def export_manifold(run: Run):
    tr = transform(run)
    man = tr["manifold"]
    body = {"manifold": man.to_json(), "contraction": {k: tr[k] for k in ("u", "s")}}
    if "oracle" in tr:
        body["oracle"] = tr["oracle"]
    rp.write_json(run.path("manifold.json"), run.header, body)


def export_cover(run: Run):
    cv = cover(run)
    if cv is None:
        rp.write_json(run.path("cover.json"), run.header, {"skipped": "cover cells need a two-dimensional system"})
        return
    rp.write_json(run.path("cover.json"), run.header, cv["summary"])


def export_figures(run: Run):
    h = run.header
    if "exponents" in run.cache:
        rp.save_figure(rp.plot_exponents(run.cache["exponents"]), run.path("exponents.png"), h)
    if "coded" in run.cache:
        rp.save_figure(rp.plot_manifolds(run.cache["coded"]), run.path("manifolds.png"), h)
        rp.save_figure(rp.plot_equivariance([r["shift_defect"] for r in run.cache["coding"]]),
                       run.path("equivariance.png"), h)
    if run.cache.get("hoelder"):
        rp.save_figure(rp.plot_decay(run.cache["hoelder"], math.exp(-run.cfg.chi / 2)), run.path("decay.png"), h)
    cv = run.cache.get("cover")
    if cv:
        rp.save_figure(rp.plot_cover(cv["cells"], cv["main"].vertex.frame), run.path("cover.png"), h)


def export_checks(run: Run, name: str = "checks.csv"):
    rp.write_csv(run.path(name), run.header, ["name", "stage", "measured", "bound", "ok"],
                 [c.row() for c in run.checks])


# manifest ---------------------------------------------------------------------------

def write_manifest(run: Run, status: str, error: str | None = None, stage: str | None = None):
    if run.out is None:
        return
    doc = {"meta": run.header, "status": status, "config": run.cfg.to_dict(), "versions": versions(),
           "files": sorted(set(run.files)), "checks": [c.row() for c in run.checks],
           "passed": run.passed, "error": error, "failed_stage": stage,
           "timings": {k: round(v, 6) for k, v in sorted(run.timings.items())}}
    (run.out / "manifest.json").write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")


COMMANDS = {
    "exponents": [export_exponents],
    "frames": [export_frames],
    "manifold": [export_manifold],
    "chain": [export_chains],
    "code": [export_coding],
    "inverse": [export_inverse],
    "cover": [export_cover],
    "pipeline": [export_exponents, export_frames, export_coding, export_inverse, export_hoelder, export_cover,
                 export_manifold],
}

SUITE_STAGES = {
    "frames": [exponents, frames],
    "transform": [transform],
    "coding": [coding, hoelder],
    "inverse": [inverse],
    "markov": [cover],
}


def run_command(cfg: RunConfig, command: str, out: Path | None = None, suite: str = "all") -> Run:
    """Run one command; the manifest in ``out`` records progress and failures."""
    run = Run(cfg, out)
    write_manifest(run, "running")
    try:
        if command == "check":
            names = SUITES if suite == "all" else (suite,)
            for s in names:
                for fn in SUITE_STAGES[s]:
                    fn(run)
            if run.out is not None:
                rp.write_json(run.path("check.json"), run.header,
                              {"suite": suite, "passed": run.passed, "checks": [c.row() for c in run.checks]})
        else:
            for fn in COMMANDS[command]:
                fn(run)
            if command == "pipeline":
                cv = run.cache.get("cover")
                export_chains(run, cv["chains"] if cv else ())
                export_figures(run)
            if run.out is not None:
                export_checks(run)
    except PesinError as exc:
        write_manifest(run, "failed", f"{type(exc).__name__}: {exc}", getattr(exc, "stage", None))
        raise
    write_manifest(run, "complete")
    return run
