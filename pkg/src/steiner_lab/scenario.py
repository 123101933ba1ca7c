"""Scenario runner: a validated JSON config in, records and plot data out."""

from __future__ import annotations

import csv
import fnmatch
import io
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Optional, Sequence

import jsonschema
import numpy as np

from .euler import (
    FlowCase,
    annular_mean_check,
    asymptotics_report,
    boundary_scan,
    build_flow_case,
    contour_records,
    derive_fields,
    euler_residuals,
    gaussian_F,
    gaussian_f,
    local_symmetry_detect,
    oscillation_scan,
    pohozaev_scan,
    reconstruct_f,
    stagnation_analysis,
)
from .grid import DomainError, GridField, dirichlet_energy, perp_gradient, save_field
from .samples import random_smooth_field
from .steiner import symmetrize_function
from .verifiers import (
    CheckRecord,
    energy_derivative_test,
    j_derivative_test,
    record_at_most,
    record_close,
    record_flag,
    records_to_csv,
    record_to_dict,
    sort_records,
    verify_l2_continuity,
    verify_polya_szego,
    verify_rearrangement_axioms,
    verify_truncation_algebra,
    reconstruction_error,
)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_FAILED = 2

STEPS = ("symmetrize", "verify", "euler", "reconstruct-f", "asymptotics",
         "scan:oscillation", "scan:flux", "scan:pohozaev", "scan:annular")
EULER_STEPS = {"euler", "reconstruct-f", "asymptotics", "scan:pohozaev"}
MIN_EULER_POINTS = 64

NONLINEARITIES = {"gaussian": (gaussian_f, gaussian_F)}


class ConfigError(Exception):
    """Invalid scenario configuration (reported with exit status 1)."""


# ------------------------------------------------------------------ config


def load_schema() -> dict:
    return json.loads(resources.files("steiner_lab").joinpath("data/scenario.schema.json").read_text())


def bundled_config(name: str) -> Path:
    """Path of a config shipped with the package (``gaussian_full.json`` ...)."""
    path = resources.files("steiner_lab").joinpath(f"data/configs/{name}")
    return Path(str(path))


def _line_of_offset(text: str, offset: int) -> int:
    return text.count("\n", 0, offset) + 1


def locate_json_path(text: str, path: Sequence[Any]) -> int:
    """Line number of the value addressed by ``path`` inside the JSON ``text``."""
    decoder = json.JSONDecoder()
    ws = " \t\r\n"

    def skip(i):
        while i < len(text) and text[i] in ws:
            i += 1
        return i

    pos = skip(0)
    for key in path:
        if text[pos] == "{":
            i = skip(pos + 1)
            found = None
            while i < len(text) and text[i] != "}":
                name, i = decoder.raw_decode(text, i)
                i = skip(i)
                i = skip(i + 1)  # ':'
                if name == key:
                    found = i
                    break
                _, i = decoder.raw_decode(text, i)
                i = skip(i)
                if text[i] == ",":
                    i = skip(i + 1)
            if found is None:
                return _line_of_offset(text, pos)
            pos = found
        elif text[pos] == "[":
            i = skip(pos + 1)
            for _ in range(int(key)):
                _, i = decoder.raw_decode(text, i)
                i = skip(i)
                if text[i] == ",":
                    i = skip(i + 1)
            pos = i
        else:
            break
    return _line_of_offset(text, pos)


def parse_config(text: str, source: str = "<config>") -> dict:
    """Parse and schema-validate a scenario config; errors name the offending line."""
    try:
        config = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}:{exc.lineno}: malformed JSON: {exc.msg}") from None
    validator = jsonschema.Draft202012Validator(load_schema())
    errors = sorted(validator.iter_errors(config), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        line = locate_json_path(text, list(err.absolute_path))
        where = "/".join(str(p) for p in err.absolute_path) or "<root>"
        raise ConfigError(f"{source}:{line}: schema violation at {where}: {err.message}")
    steps = set(config.get("steps", default_steps(config)))
    n = config["grid"]["n"]
    if steps & EULER_STEPS and n < MIN_EULER_POINTS:
        raise ConfigError(f"{source}: Euler scenarios need grid n >= {MIN_EULER_POINTS}, got {n}")
    return config


def load_config(path: str | Path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, str(path))


def default_steps(config: dict) -> list[str]:
    kind = config["case"]["kind"]
    if kind == "oscillating_counterexample":
        return ["asymptotics"]
    if kind == "two_bump":
        return ["euler", "reconstruct-f"]
    return ["euler", "reconstruct-f", "asymptotics", "scan:oscillation", "scan:flux",
            "scan:pohozaev", "scan:annular"]


def _values(spec, default: Sequence[float]) -> np.ndarray:
    if spec is None:
        return np.asarray(default, dtype=float)
    if isinstance(spec, dict):
        return np.linspace(spec["start"], spec["stop"], int(spec["num"]))
    return np.asarray(spec, dtype=float)


# ------------------------------------------------------------------ execution


@dataclass
class StepOutput:
    records: list
    plots: dict  # name -> (header, rows)
    fields: dict  # file name -> GridField


def _suffix(records: list[CheckRecord], tag: str) -> list[CheckRecord]:
    return [replace(r, name=f"{r.name}:{tag}") for r in records]


class ScenarioRunner:
    def __init__(self, config: dict, seed: Optional[int] = None):
        self.config = config
        self.seed = int(config.get("seed", 0) if seed is None else seed)
        self.case = self._build_case()
        self._derived = None

    # -- setup
    def _build_case(self) -> FlowCase:
        spec = self.config["case"]
        params = dict(spec.get("params", {}))
        grid = self.config["grid"]
        if spec["kind"] == "radial_from_f":
            name = params.pop("nonlinearity", "gaussian")
            params["f"], params["F"] = NONLINEARITIES[name]
        if spec["kind"] == "from_file":
            params["path"] = str(params["path"])
        return build_flow_case(spec["kind"], L=float(grid["L"]), n=int(grid["n"]), **params)

    @property
    def sym(self) -> dict:
        s = self.config.get("symmetrization", {})
        return {"t_list": s.get("t_list", [0.1]), "directions": s.get("directions", [[1.0, 0.0]]),
                "K": int(s.get("K", 64))}

    @property
    def scans(self) -> dict:
        return self.config.get("scans", {})

    def derived(self):
        if self._derived is None:
            self._derived = derive_fields(self.case)
        return self._derived

    def _u(self) -> GridField:
        if self.case.field is None:
            raise ConfigError(f"case {self.case.name} has no grid field for this step")
        return self.case.field

    def _radii(self, default_frac=(0.125, 0.875), num=13) -> np.ndarray:
        u = self._u()
        return _values(self.scans.get("radii"), np.linspace(default_frac[0] * u.L, default_frac[1] * u.L, num))

    def _levels(self) -> np.ndarray:
        u = self._u()
        lo, hi = u.ring_mean(), float(u.values.max())
        return _values(self.scans.get("levels"), lo + (hi - lo) * np.linspace(0.1, 0.9, 9))

    # -- steps
    def step_symmetrize(self) -> StepOutput:
        u = self._u()
        s = self.sym
        records, fields = [], {}
        for k, eta in enumerate(s["directions"]):
            eps = reconstruction_error(u, eta, s["K"]).energy_drift
            for t in s["t_list"]:
                res = symmetrize_function(u, t, eta, s["K"])
                fields[f"u_t{t:g}_dir{k}.field"] = res.field
                records.append(replace(verify_polya_szego(u, t, eta, s["K"], eps_rec=eps),
                                       name=f"polya_szego:t={t:g}:dir={k}"))
        return StepOutput(records, {}, fields)

    def step_verify(self) -> StepOutput:
        u = self._u()
        s = self.sym
        levels = self._levels()
        records = []
        ts = [t for t in s["t_list"] if t > 0] or [0.1]
        eta = s["directions"][0]
        F = self.case.F
        for t in ts:
            tag = f"t={t:g}"
            records += _suffix(verify_rearrangement_axioms(u, t, ts[0], levels, F, eta, s["K"]), tag)
            records.append(replace(verify_polya_szego(u, t, eta, s["K"]), name=f"polya_szego:{tag}"))
        for m in self.scans.get("m_list", []):
            records += _suffix(verify_truncation_algebra(u, float(m), ts[0], eta, s["K"]), f"t={ts[0]:g}")
        if "l2_radius" in self.scans:
            R = float(self.scans["l2_radius"])
            for t in ts:
                records.append(replace(verify_l2_continuity(u, t, R, eta, s["K"]),
                                       name=f"l2_continuity:t={t:g}"))
        if self.case.f is not None and self.scans.get("j_test", True):
            records += j_derivative_test(self.case, self.scans.get("j_t_list", [1e-3, 1e-2]), eta, s["K"])
        if self.scans.get("energy_derivative", False):
            records.append(energy_derivative_test(u, [min(ts)], s["directions"], s["K"],
                                                  expect_symmetric=self.case.kind != "two_bump"))
        return StepOutput(records, {}, {})

    def _expected_center(self):
        return self.case.params.get("center")

    def step_euler(self) -> StepOutput:
        u = self._u()
        records, plots = [], {}
        refs = self.case.analytic_refs
        if self.case.F is not None:
            v, omega, B, p = self.derived()
            records += euler_residuals(v, omega, B, p)
            energy = dirichlet_energy(u)
            if "energy" in refs:
                records.append(record_close("analytic:energy", energy, refs["energy"], 0.005 * refs["energy"],
                                            "flow-case", "0.5% of the analytic energy"))
            if "max_speed" in refs:
                speed = v.norm().values
                i, j = np.unravel_index(np.argmax(speed), speed.shape)
                c = self._expected_center() or (0.0, 0.0)
                r_at = math.hypot(u.x[i] - c[0], u.x[j] - c[1])
                records.append(record_close("analytic:max_speed", float(speed.max()), refs["max_speed"],
                                            u.h * 0.1, "flow-case", "0.1h (speed curvature scale)"))
                records.append(record_close("analytic:max_speed_radius", r_at, 1.0, u.h, "flow-case", "h"))
            if "B_center" in refs:
                records.append(record_close("analytic:B_center", float(B.values.max() if refs["B_center"] > 0
                                                                          else B.values.min()),
                                            refs["B_center"], u.h ** 2, "flow-case", "h^2"))
        else:
            v = perp_gradient(u)
        stag = stagnation_analysis(v)
        half = stagnation_analysis(v, stag.tol_v / 2)
        records.append(record_close("stagnation:connected", stag.components, 1, 0, "stagnation-set",
                                    "exactly one component", tol_v=stag.tol_v, whole_plane=stag.whole_plane))
        records.append(record_close("stagnation:stable_under_halving", half.components, stag.components, 0,
                                    "stagnation-set", "same count with tol_v/2"))
        sym = local_symmetry_detect(u, v)
        records.append(record_flag("symmetry:radial", sym.classification == "radial", "local-symmetry",
                                   "scatter <= h*Lip(u) at >= 95% of radii", classification=sym.classification,
                                   radial_fraction=sym.radial_fraction))
        c = self._expected_center()
        if c is not None:
            dist = math.hypot(sym.center[0] - c[0], sym.center[1] - c[1])
            records.append(record_at_most("symmetry:center", dist, 0.0, u.h, "local-symmetry", "h",
                                          center=f"{sym.center[0]:.6g},{sym.center[1]:.6g}"))
        plots["radial_profile"] = (("r", "circle_mean"), list(zip(sym.profile.r, sym.profile.values)))
        plots["radial_scatter"] = (("r", "scatter"), list(zip(sym.profile.r, sym.profile.scatter)))
        return StepOutput(records, plots, {})

    def step_reconstruct_f(self) -> StepOutput:
        u = self._u()
        levels = self._levels()
        if self.case.F is None:
            return StepOutput(contour_records(u, levels), {}, {})
        v, omega, B, p = self.derived()
        rec = reconstruct_f(u, B, levels, v)
        records = list(rec.contour_records)
        if self.case.f is not None:
            exact = self.case.f(rec.levels)
            scale = float(np.max(np.abs(exact)))
            records.append(record_at_most("f_reconstruction:sup_error", float(np.max(np.abs(rec.f_table - exact))),
                                          0.0, 0.02 * scale, "level-curves", "2% of max|f| on the levels"))
            records.append(record_at_most("f_reconstruction:residual_sup", rec.residual_sup, 0.0, 0.02 * scale,
                                          "level-curves", "2% of max|f| on the levels"))
            if "f_top" in self.case.analytic_refs:
                records.append(record_close("f_reconstruction:top", rec.f_top, self.case.analytic_refs["f_top"],
                                            2 * u.h ** 2, "level-curves", "2h^2"))
        plots = {"f_table": (("c", "f"), rec.pairs()),
                 "F_table": (("c", "F"), list(zip(rec.levels, rec.F_table)))}
        return StepOutput(records, plots, {})

    def step_asymptotics(self) -> StepOutput:
        return StepOutput(asymptotics_report(self.case), {}, {})

    def step_scan_oscillation(self) -> StepOutput:
        scan = oscillation_scan(self._u(), self._radii())
        return StepOutput([scan.record], {"oscillation": (("R", "oscillation"),
                                                          list(zip(scan.radii, scan.oscillation)))}, {})

    def step_scan_flux(self) -> StepOutput:
        u = self._u()
        phi = u.like(np.ones_like(u.values)) if self.scans.get("flux_phi", "one") == "one" else u
        radii = self._radii((0.1875, 0.875))
        scan = boundary_scan(u, phi, radii[radii > 1.0])
        plots = {"flux": (("R", "R_logR_flux"), list(zip(scan.radii, scan.weighted_flux))),
                 "green_residual": (("R", "residual"), list(zip(scan.radii, scan.green_residual)))}
        return StepOutput(scan.records, plots, {})

    def step_scan_pohozaev(self) -> StepOutput:
        radii = self._radii()
        scan = pohozaev_scan(self.case, radii)
        records = list(scan.records)
        shifted = pohozaev_scan(self.case, radii, F_shift=1.0)
        records += [replace(r, name=r.name.replace("pohozaev:", "pohozaev_shifted:")) for r in shifted.records]
        records.append(record_close("pohozaev_shifted:ell_equals_pi", shifted.ell, math.pi, 0.02 * math.pi,
                                    "pohozaev", "2% of pi"))
        plots = {"pohozaev_psi": (("R", "Psi"), list(zip(scan.radii, scan.psi))),
                 "pohozaev_residual": (("R", "residual"), list(zip(scan.radii, scan.residual)))}
        return StepOutput(records, plots, {})

    def step_scan_annular(self) -> StepOutput:
        u = self._u()
        pairs = self.scans.get("pairs") or [[0.125 * u.L, 0.25 * u.L], [0.25 * u.L, 0.5 * u.L]]
        records = _suffix(annular_mean_check(u, pairs), "u")
        rng = np.random.default_rng(self.seed)
        for k in range(int(self.scans.get("random_fields", 0))):
            phi = random_smooth_field(rng, u.L, u.n)
            records += _suffix(annular_mean_check(phi, pairs), f"random{k}")
        return StepOutput(records, {}, {})

    def run_step(self, step: str) -> StepOutput:
        method = getattr(self, "step_" + step.replace("scan:", "scan_").replace("-", "_"))
        return method()


def thread_cap() -> int:
    env = os.environ.get("STEINER_LAB_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return max(1, min(4, os.cpu_count() or 1))


@dataclass
class ScenarioResult:
    name: str
    records: list
    expected: dict  # record name -> expected failure
    plots: dict
    fields: dict
    status: int

    def effective_ok(self, r: CheckRecord) -> bool:
        return r.diagnostic or (r.passed != self.expected.get(r.name, False))

    @property
    def n_passing(self) -> int:
        return sum(1 for r in self.records if not r.diagnostic and r.passed)


def run_scenario(config: dict, steps: Optional[Sequence[str]] = None, seed: Optional[int] = None) -> ScenarioResult:
    """Execute the configured steps and compute the exit status.

    A record named in ``expect_fail`` (shell-style patterns) is a negative
    control: it counts as satisfied when it fails.  Diagnostic records have
    no pass semantics.  Status 0 when every record is satisfied, 2 otherwise.
    """
    runner = ScenarioRunner(config, seed)
    steps = list(steps if steps is not None else config.get("steps", default_steps(config)))
    unknown = [s for s in steps if s not in STEPS]
    if unknown:
        raise ConfigError(f"unknown steps {unknown}")
    with ThreadPoolExecutor(max_workers=thread_cap()) as pool:
        outputs = list(pool.map(runner.run_step, steps))
    records, plots, fields = [], {}, {}
    for out in outputs:
        records += out.records
        plots.update(out.plots)
        fields.update(out.fields)
    records = sort_records(records)
    patterns = config.get("expect_fail", [])
    expected = {r.name: any(fnmatch.fnmatchcase(r.name, p) for p in patterns) for r in records}
    result = ScenarioResult(config.get("name", runner.case.name), records, expected, plots, fields, EXIT_OK)
    ok = all(result.effective_ok(r) for r in records)
    result.status = EXIT_OK if ok else EXIT_FAILED
    return result


# ------------------------------------------------------------------ output


def _plot_csv(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for a, b in rows:
        writer.writerow([repr(float(a)), repr(float(b))])
    return buf.getvalue()


def write_outputs(result: ScenarioResult, out_dir: str | Path, formats: Sequence[str] = ("csv", "json")) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if "csv" in formats:
        (out / "records.csv").write_text(records_to_csv(result.records))
    if "json" in formats:
        report = {
            "scenario": result.name,
            "exit_status": result.status,
            "summary": {
                "records": len(result.records),
                "passing": result.n_passing,
                "diagnostic": sum(1 for r in result.records if r.diagnostic),
                "expected_failures": sum(1 for v in result.expected.values() if v),
                "unsatisfied": [r.name for r in result.records if not result.effective_ok(r)],
            },
            "records": [dict(record_to_dict(r), expected_fail=result.expected[r.name],
                             effective_ok=result.effective_ok(r)) for r in result.records],
        }
        (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    if result.plots:
        (out / "plots").mkdir(exist_ok=True)
        for name, (header, rows) in sorted(result.plots.items()):
            (out / "plots" / f"{name}.csv").write_text(_plot_csv(header, rows))
    if result.fields:
        (out / "fields").mkdir(exist_ok=True)
        for name, f in sorted(result.fields.items()):
            save_field(out / "fields" / name, f)
