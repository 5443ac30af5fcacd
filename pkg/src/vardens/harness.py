"""Convergence-study driver: runs the scheme on manufactured cases, tracks
max-in-time L2 errors, and emits the convergence tables.

Space mode refines the mesh at a fixed small time step; time mode couples
the mesh to the step through h = tau^(1/2).  Observed orders come from
log-ratios of consecutive errors.  Mesh resolution n is the number of
subdivisions per side, so the nominal h reported in tables is 1/n.
"""

import math
import time
import warnings
from dataclasses import dataclass

import numpy as np

from . import assemble
from .mesh import unit_cube_mesh, unit_square_mesh
from .mms import make_case
from .scheme import SchemeConfig, TimeStepper

UNDEFINED_ORDER = float("nan")


def parse_fraction(text):
    """Accept '1/8' style literals as well as plain floats."""
    text = str(text).strip()
    if "/" in text:
        num, den = text.split("/")
        return float(num) / float(den)
    return float(text)


def compute_order(e1, h1, e2, h2):
    """log(E1/E2) / log(h1/h2); undefined-order sentinel on bad input."""
    if e1 <= 0.0 or e2 <= 0.0 or h1 <= 0.0 or h2 <= 0.0 or h1 == h2:
        return UNDEFINED_ORDER
    return math.log(e1 / e2) / math.log(h1 / h2)


def l2_error_at_step(geom, values, exact_values):
    """L2(Omega) distance between point values on the same quadrature."""
    diff = np.asarray(values) - np.asarray(exact_values)
    if diff.ndim == 3:  # vector field
        sq = np.einsum("cqd,cqd->cq", diff, diff)
    else:
        sq = diff * diff
    return math.sqrt(assemble.integrate(geom, sq))


def _resolution_for(value, what):
    n = round(1.0 / value)
    if n < 1 or abs(n * value - 1.0) > 1e-9 * n:
        raise ValueError(f"{what} {value} is not 1/n for integer n")
    return int(n)


def build_mesh(case, h):
    n = _resolution_for(h, "mesh size")
    if case.dim == 2:
        return unit_square_mesh(n)
    if case.name == "cube3d_nonsmooth" and n % 2 == 1:
        warnings.warn(
            "odd subdivision places quadrature points near the density "
            "kink; prefer even n", stacklevel=2,
        )
    return unit_cube_mesh(n)


def run_case(case, h, tau, T=0.25, mu=0.001, cutoff_mode="widened",
             density_solver="auto", diag_stream=None):
    """Time-march one manufactured problem; returns errors and timings.

    Tracks the max-over-steps L2 errors of density and velocity, evaluated
    every step on the over-integration rule.
    """
    mesh = build_mesh(case, h)
    sources = case.make_source_evaluator(mu)
    config = SchemeConfig(
        tau=tau, mu=mu, T=T, cutoff_mode=cutoff_mode,
        density_solver=density_solver,
        f=sources.f,
        g=sources.g,
    )
    stepper = TimeStepper(mesh, config)
    geom = stepper.geom_lo

    errors = {"rho": 0.0, "u": 0.0}

    def track(state, diag):
        rho_q = assemble.eval_scalar(stepper.p2_lo, state.rho)
        u_q = assemble.eval_mini_vector(stepper.mini_lo, state.u)
        e_rho = l2_error_at_step(geom, rho_q, case.rho(geom.points, state.t))
        e_u = l2_error_at_step(geom, u_q, case.u(geom.points, state.t))
        errors["rho"] = max(errors["rho"], e_rho)
        errors["u"] = max(errors["u"], e_u)

    t0 = time.perf_counter()
    state, diagnostics = stepper.run(
        lambda x: case.rho(x, 0.0),
        lambda x: case.u(x, 0.0),
        diag_stream=diag_stream,
        on_step=track,
        check_energy=False,
    )
    seconds = time.perf_counter() - t0
    return {
        "E_rho": errors["rho"],
        "E_u": errors["u"],
        "seconds": seconds,
        "state": state,
        "diagnostics": diagnostics,
        "stepper": stepper,
    }


@dataclass
class StudySpec:
    """One convergence study: which case, which refinement axis, which grids."""

    case: str
    mode: str                    # space | time
    params: list                 # h values (space) or tau values (time)
    tau: float = 1.0 / 2048.0    # fixed step for space mode
    T: float = 0.25
    mu: float = 0.001
    cutoff_mode: str = "widened"
    density_solver: str = "auto"
    out_format: str = "csv"      # csv | md

    def __post_init__(self):
        if self.mode not in ("space", "time"):
            raise ValueError(f"unknown study mode {self.mode!r}")
        p = list(self.params)
        if len(p) == 0 or any(b >= a for a, b in zip(p, p[1:])):
            raise ValueError("parameter list must be strictly decreasing")
        self.params = p


@dataclass
class ConvergenceRecord:
    h: float
    tau: float
    E_rho: float = float("nan")
    E_u: float = float("nan")
    order_rho: float = UNDEFINED_ORDER
    order_u: float = UNDEFINED_ORDER
    seconds: float = float("nan")
    failed: bool = False
    message: str = ""


def run_study(spec: StudySpec, progress=None):
    """Run every row of the study; row failures are recorded, not raised."""
    case = make_case(spec.case)
    records = []
    for value in spec.params:
        if spec.mode == "space":
            h, tau = value, spec.tau
        else:
            tau = value
            n = round(1.0 / math.sqrt(tau))
            if abs(n * n * tau - 1.0) > 1e-9:
                raise ValueError(
                    f"tau {tau} is not 1/n^2; required by the h = tau^(1/2) "
                    "coupling"
                )
            h = 1.0 / n
        rec = ConvergenceRecord(h=h, tau=tau)
        try:
            result = run_case(
                case, h, tau, T=spec.T, mu=spec.mu,
                cutoff_mode=spec.cutoff_mode,
                density_solver=spec.density_solver,
            )
            rec.E_rho = result["E_rho"]
            rec.E_u = result["E_u"]
            rec.seconds = result["seconds"]
        except Exception as exc:  # row failure: record and continue
            rec.failed = True
            rec.message = f"{type(exc).__name__}: {exc}"
        records.append(rec)
        if progress is not None:
            progress(rec)

    scale = "h" if spec.mode == "space" else "tau"
    prev = None
    for rec in records:
        if rec.failed or prev is None or prev.failed:
            prev = rec
            continue
        x1 = getattr(prev, scale)
        x2 = getattr(rec, scale)
        rec.order_rho = compute_order(prev.E_rho, x1, rec.E_rho, x2)
        rec.order_u = compute_order(prev.E_u, x1, rec.E_u, x2)
        prev = rec
    return records


def _fmt_order(v):
    return "" if math.isnan(v) else f"{v:.2f}"


def records_to_csv(records):
    lines = ["h,tau,E_rho,order_rho,E_u,order_u,seconds"]
    for r in records:
        if r.failed:
            lines.append(f"{r.h:.10g},{r.tau:.10g},failed,,,,{r.message}")
            continue
        lines.append(
            f"{r.h:.10g},{r.tau:.10g},{r.E_rho:.6e},{_fmt_order(r.order_rho)},"
            f"{r.E_u:.6e},{_fmt_order(r.order_u)},{r.seconds:.3f}"
        )
    return "\n".join(lines) + "\n"


def records_to_table(records, markdown=False):
    header = ["h", "tau", "E_rho", "order", "E_u", "order", "seconds"]
    rows = []
    for r in records:
        if r.failed:
            rows.append([f"{r.h:.6g}", f"{r.tau:.6g}", "failed", "", "",
                         "", r.message])
            continue
        rows.append([
            f"{r.h:.6g}", f"{r.tau:.6g}", f"{r.E_rho:.3e}",
            _fmt_order(r.order_rho) or "-", f"{r.E_u:.3e}",
            _fmt_order(r.order_u) or "-", f"{r.seconds:.1f}",
        ])
    widths = [max(len(h), *(len(row[i]) for row in rows)) if rows else len(h)
              for i, h in enumerate(header)]
    if markdown:
        out = ["| " + " | ".join(h.ljust(w) for h, w in zip(header, widths)) + " |"]
        out.append("|" + "|".join("-" * (w + 2) for w in widths) + "|")
        for row in rows:
            out.append("| " + " | ".join(c.ljust(w) for c, w in zip(row, widths)) + " |")
    else:
        out = ["  ".join(h.rjust(w) for h, w in zip(header, widths))]
        for row in rows:
            out.append("  ".join(c.rjust(w) for c, w in zip(row, widths)))
    return "\n".join(out) + "\n"
