import logging
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .config import init_config, load_config, thread_count
from .dynamics import (
    FullState,
    ParticleState,
    TestFunctional,
    energy_norm,
    evolve,
)
from .errors import ConditionFailure, DecayWindowError
from .experiment_config import ExperimentConfig, lower_keys, validate_config
from .experiment_output import ExperimentOutput
from .measures import (
    Q_infinity,
    ensemble_run,
    exact_Qt_series,
    limit_covariance,
    transport_defect,
)
from .model import ConditionReport, check_conditions
from .resolvent import (
    KernelN,
    fit_decay,
    imaginary_axis_scan,
    inverse_laplace_N,
    kernel_envelope,
    limiting_absorption_im_H,
    plemelj_im_H,
    resolvent_table,
)
from .scattering import (
    ScatteringProfiles,
    attach_functional,
    build_alpha_beta,
    build_psi_Z,
    hm_norm,
    residual_series,
    unit_functionals,
)

logger = logging.getLogger(__name__)

# Conditions each experiment needs before it runs
REQUIRED_CONDITIONS: Dict[str, Tuple[str, ...]] = {
    "check-model": ("A1", "A1'", "A3"),
    "simulate": ("A1'",),
    "energy-decay": ("A1'",),
    "resolvent": ("A1", "A1'", "A3"),
    "plemelj": (),
    "equilibrium": ("A1", "A1'", "A3"),
    "scattering": ("A1", "A1'", "A3"),
}

TRANSPORT_TIMES = (1.0, 7.3)


class ExperimentProcessor:
    """Runs one named experiment for a validated configuration and writes its artifacts."""

    def __init__(
        self,
        config: ExperimentConfig,
        out_dir: Optional[str] = None,
        quiet: bool = False,
    ):
        """
        Args:
            config: Validated configuration.
            out_dir: Artifact directory; defaults to config.output_dir.
            quiet: If True, suppress user-facing output.
        """
        self.logger = logging.getLogger(__name__)
        self.config = config
        self.model = config.model
        self.quiet = quiet
        self.output = ExperimentOutput(
            out_dir=out_dir or config.output_dir,
            experiment=config.experiment,
            config_echo=config.echo(),
            seeds=[config.seed] if config.seed is not None else [],
        )

    @classmethod
    def from_path(
        cls,
        config_path: Optional[str] = None,
        experiment: Optional[str] = None,
        out_dir: Optional[str] = None,
        seed: Optional[int] = None,
        quiet: bool = False,
    ) -> "ExperimentProcessor":
        """Load, override and validate a configuration, then build a processor for it."""
        config = cls._load_config(config_path, experiment=experiment, seed=seed, quiet=quiet)
        return cls(config, out_dir=out_dir, quiet=quiet)

    @staticmethod
    def _load_config(
        config_path: Optional[str],
        experiment: Optional[str] = None,
        seed: Optional[int] = None,
        quiet: bool = False,
    ) -> ExperimentConfig:
        settings = load_config("kgcouple", config_path, quiet)
        data = lower_keys(settings.to_dict())
        if experiment is not None:
            data["experiment"] = experiment
        if seed is not None:
            data["seed"] = seed
        return validate_config(data)

    @staticmethod
    def init_config(config_path: Optional[str] = None, force: bool = False, quiet: bool = False) -> None:
        init_config("kgcouple", config_path, force, quiet)

    def _print_and_log(self, msg: str) -> None:
        self.logger.info(msg)
        if not self.quiet:
            print(msg)

    @property
    def handlers(self) -> Dict[str, Callable[[], None]]:
        return {
            "check-model": self.check_model,
            "simulate": self.simulate,
            "energy-decay": self.energy_decay,
            "resolvent": self.resolvent,
            "plemelj": self.plemelj,
            "equilibrium": self.equilibrium,
            "scattering": self.scattering,
        }

    def run(self) -> ExperimentOutput:
        """Run the configured experiment. Metadata is written even when the experiment fails.

        Raises:
            ConditionFailure: If a condition the experiment needs does not hold.
        """
        experiment = self.config.experiment
        self.output.prepare()
        self._print_and_log(f"Running {experiment} into {self.output.out_dir}")
        try:
            self.handlers[experiment]()
        finally:
            self.output.write_metadata()
        self._print_and_log(f"Finished {experiment}: {len(self.output.artifacts)} artifacts")
        return self.output

    def _require(self, report: Optional[ConditionReport] = None) -> ConditionReport:
        report = report or check_conditions(self.model)
        needed = REQUIRED_CONDITIONS[self.config.experiment]
        missing = [name for name in report.failures() if name in needed]
        if missing:
            self.logger.error(f"{self.config.experiment} needs {', '.join(missing)}, which fail for this model")
            raise ConditionFailure(
                f"Condition(s) {', '.join(missing)} fail; {self.config.experiment} cannot run", report=report
            )
        return report

    def _functionals(self) -> List[Tuple[str, TestFunctional]]:
        if not self.config.functionals:
            return unit_functionals(self.model)
        return [(f.id, f.build(self.model)) for f in self.config.functionals]

    def _kernel(self, t_max: float, t_step: Optional[float] = None) -> KernelN:
        step = t_step or self.config.resolvent.t_step
        t_grid = np.arange(0.0, t_max + 0.5 * step, step)
        return inverse_laplace_N(self.model, t_grid, self.config.resolvent.contour())

    def _profiles(self) -> ScatteringProfiles:
        horizon = self.config.scattering.horizon or self.config.resolvent.t_max
        kernel = self._kernel(horizon)
        return build_alpha_beta(self.model, kernel, horizon=horizon, ds=self.config.scattering.ds)

    def _fit_kind(self) -> str:
        return "power" if all(m > 0 for m in self.model.masses) else "exponential"

    def check_model(self) -> None:
        report = check_conditions(self.model)
        payload = report.model_dump()
        payload.update({"all_hold": report.all_hold, "failures": report.failures()})
        self.output.write_json("conditions.json", payload)
        self._require(report)

    def simulate(self) -> None:
        self._require()
        tg = self.config.time_grid
        Y0 = self.config.initial.build(self.model)
        traj = evolve(
            Y0,
            tg.t_max,
            self.config.dt,
            self.model,
            snapshot_stride=tg.snapshot_stride,
            radii=tg.radii,
            keep_states=True,
        )
        radii = sorted(traj.local_norms)
        local_headers = [f"local_norm_R{R:g}" for R in radii]
        at_snapshot = np.searchsorted(traj.times, traj.snapshot_times)
        self.output.write_csv(
            "trajectory.csv",
            ["t", "q1", "q2", "q3", "p1", "p2", "p3", "H"] + local_headers,
            [
                [t, *traj.q[i], *traj.p[i], H, *(traj.local_norms[R][j] for R in radii)]
                for j, (t, i, H) in enumerate(zip(traj.snapshot_times, at_snapshot, traj.energies))
            ],
        )
        norms = [energy_norm(Y, self.model) for Y in traj.states]
        self.output.write_csv("snapshots.csv", ["t", "energy_norm"], list(zip(traj.snapshot_times, norms)))
        H0 = float(traj.energies[0])
        spread = float(np.max(np.abs(traj.energies - H0)))
        drift = spread / abs(H0) if H0 != 0 else spread
        initial_norm = norms[0]
        self.output.write_json(
            "summary.json",
            {
                "steps": int(traj.times.size - 1),
                "dt": traj.dt,
                "t_max": tg.t_max,
                "H0": H0,
                "relative_H_drift": drift,
                "apriori_constant": max(norms) / initial_norm if initial_norm > 0 else 0.0,
            },
        )
        self._print_and_log(f"Relative energy drift {drift:.3g} over {traj.times.size - 1} steps")

    def decay_window(self) -> Tuple[float, float]:
        """Fit window [2(R+R1+R_ρ), L/2−R−R1], clipped to t_max, unless DECAY.window sets one.

        Raises:
            DecayWindowError: If the default window is empty for this box and horizon.
        """
        decay = self.config.decay
        if decay.window is not None:
            return decay.window
        R, R1, R_rho = decay.radius, self.config.initial.field_radius, self.model.max_support
        start = 2.0 * (R + R1 + R_rho)
        end = min(self.config.time_grid.t_max, self.model.box_length / 2.0 - R - R1)
        if end <= start:
            msg = (
                f"Default decay window [{start:g}, {end:g}] is empty (R={R:g}, R1={R1:g}, R_rho={R_rho:g}, "
                f"L={self.model.box_length:g}, t_max={self.config.time_grid.t_max:g}); "
                "enlarge MODEL.box_length and TIME_GRID.t_max or set DECAY.window"
            )
            logger.error(msg)
            raise DecayWindowError(msg)
        return start, end

    def energy_decay(self) -> None:
        self._require()
        tg, R = self.config.time_grid, self.config.decay.radius
        window = self.decay_window()
        Y0 = self.config.initial.build(self.model)
        traj = evolve(Y0, tg.t_max, self.config.dt, self.model, snapshot_stride=tg.snapshot_stride, radii=[R])
        values = traj.local_norms[float(R)]
        self.output.write_csv("local_energy.csv", ["t", "local_norm"], list(zip(traj.snapshot_times, values)))
        fit = fit_decay(traj.snapshot_times, values, self._fit_kind(), window=window)
        self.output.write_json("decay_fit.json", {**fit.model_dump(), "radius": R})
        self._print_and_log(f"{fit.kind} decay fit on {window}: {fit.rate_or_slope:.4g}")

    def resolvent(self) -> None:
        self._require()
        rc = self.config.resolvent
        kernel = self._kernel(rc.t_max)
        self.output.write_csv("kernel.csv", KernelN.header(), kernel.rows())

        lams = np.linspace(0.0, rc.x_max, rc.real_lambda_samples)
        table = resolvent_table(self.model, lams)
        d_min = [float(np.linalg.eigvalsh(D.real).min()) for D in table.D_vals]
        self.output.write_csv("d_real_axis.csv", ["lambda", "min_eig_D"], list(zip(lams, d_min)))

        envelope = kernel_envelope(kernel, self.model.omega)
        fit_window = (1.0, min(rc.t_max, self.model.box_length / 2 - self.model.max_support))
        try:
            fit = fit_decay(kernel.t_samples, envelope, self._fit_kind(), window=fit_window).model_dump()
        except DecayWindowError as e:
            self.logger.warning(f"Kernel envelope fit skipped: {e}")
            fit = None

        consistency = self._kernel_consistency(kernel)
        self.output.write_json(
            "kernel.json",
            {
                "contour": kernel.contour.model_dump(),
                "imag_residue": kernel.imag_residue,
                "tail_estimate": kernel.tail_estimate,
                "real_axis_min_eig_D": min(d_min),
                "real_axis_positive": bool(min(d_min) > 0),
                "envelope_fit": fit,
                "particle_consistency": consistency,
            },
        )
        error = consistency["max_abs_error"]
        self._print_and_log(f"Kernel N(t) on {kernel.t_samples.size} times; q(t) vs N(t)e1 max error {error:.3g}")

    def _kernel_consistency(self, kernel: KernelN) -> dict:
        """Simulated q(t) from φ⁰ = 0, q⁰ = 0, p⁰ = e₁ against N(t)e₁ while the field cannot wrap around."""
        T = min(float(kernel.t_samples[-1]), self.model.box_length / 2 - self.model.max_support)
        e1 = np.array([1.0, 0.0, 0.0])
        Y0 = FullState.zeros(self.model).model_copy(update={"particle": ParticleState(q=np.zeros(3), p=e1)})
        traj = evolve(Y0, T, self.model.dt, self.model, snapshot_stride=max(1, int(round(T / self.model.dt))))
        keep = kernel.t_samples <= T + 1e-12
        t = kernel.t_samples[keep]
        simulated = np.stack([np.interp(t, traj.times, traj.q[:, i]) for i in range(3)], axis=1)
        error = float(np.abs(simulated - kernel.N_vals[keep][:, :, 0]).max(initial=0.0))
        return {"t_max": T, "max_abs_error": error}

    def plemelj(self) -> None:
        pc = self.config.plemelj
        min_sv = imaginary_axis_scan(self.model, pc.xs, pc.eps)
        rows = []
        for x, sv in zip(pc.xs, min_sv):
            surface = plemelj_im_H(self.model, x, pc.v)
            extrapolated = limiting_absorption_im_H(self.model, x, pc.v, pc.eps)
            scale = max(abs(surface), abs(extrapolated))
            rel = abs(surface - extrapolated) / scale if scale > 0 else 0.0
            rows.append([x, surface, extrapolated, rel, sv])
        self.output.write_csv(
            "plemelj.csv", ["x", "surface", "extrapolated", "rel_diff", "min_singular_value"], rows
        )

    def equilibrium(self) -> None:
        self._require()
        cfg = self.config
        named = self._functionals()
        ids = [name for name, _ in named]
        Zs = [Z for _, Z in named]
        times = cfg.time_grid.times
        stats = ensemble_run(
            cfg.covariance,
            self.model,
            Zs,
            times,
            cfg.ensemble.m,
            cfg.seed,
            functional_ids=ids,
            propagation=cfg.ensemble.propagation,
            dt=cfg.dt,
            radius=cfg.ensemble.radius,
            threads=thread_count(),
        )
        exact = exact_Qt_series(Zs, times, cfg.covariance, self.model, dt=cfg.dt)
        self.output.seeds = [cfg.seed] + stats.seeds
        self._write_statistics(stats.times, ids, stats, exact)

        profiles = self._profiles()
        limit = limit_covariance(cfg.covariance, self.model)
        q_inf = {name: Q_infinity(Z, limit, profiles, self.model) for name, Z in named}
        self.output.write_json(
            "limit.json",
            {
                "Q_infinity": q_inf,
                "exact_Q_last": {name: float(exact[-1, a, a]) for a, name in enumerate(ids)} if len(times) else {},
                "transport_defect": {f"{t:g}": transport_defect(limit, self.model, t) for t in TRANSPORT_TIMES},
                "moment_check": stats.moment_check,
                "horizon": profiles.horizon,
            },
        )

    def _write_statistics(self, times: Sequence[float], ids: List[str], stats, exact: np.ndarray) -> None:
        rows, char_rows = [], []
        for j, t in enumerate(times):
            for a, name in enumerate(ids):
                q_exact = exact[j, a, a]
                rows.append(
                    [t, name, stats.means[j, a], stats.mean_se[j, a], stats.Q_emp[j, a, a], stats.Q_se[j, a, a]]
                    + [q_exact]
                )
                char = stats.char_values[j, a]
                char_rows.append(
                    [
                        t,
                        name,
                        char.real,
                        char.imag,
                        stats.char_se[j, a],
                        np.exp(-0.5 * q_exact),
                        stats.gauss_gap[j, a],
                        stats.gauss_gap_se[j, a],
                    ]
                )
        self.output.write_csv(
            "statistics.csv", ["t", "id", "mean", "mean_se", "Q_empirical", "Q_se", "Q_exact"], rows
        )
        self.output.write_csv(
            "characteristic.csv",
            ["t", "id", "char_re", "char_im", "char_se", "gaussian_exact", "gauss_gap", "gauss_gap_se"],
            char_rows,
        )

    def scattering(self) -> None:
        self._require()
        cfg = self.config
        named = self._functionals()
        profiles = self._profiles()
        times = cfg.scattering.times
        rows = []
        norms = {}
        for name, Z in named:
            residuals = residual_series(Z, times, cfg.covariance, profiles, self.model, dt=cfg.dt)
            rows.extend([t, name, r] for t, r in zip(times, residuals))
            norms[name] = hm_norm(build_psi_Z(Z, profiles, self.model), self.model)
        self.output.write_csv("residuals.csv", ["t", "id", "residual"], rows)
        first_name, first_Z = named[0]
        arrays, descriptor = attach_functional(first_Z, profiles, self.model).export_arrays(self.model.grid)
        self.output.write_arrays("profiles", arrays, {**descriptor, "functional": first_name})
        self.output.write_json("scattering.json", {"psi_Z_norms": norms, "horizon": profiles.horizon})
