"""Finite-volume transport stepping shared by the micro and macro solvers.

One step treats the nonlinear diffusion implicitly through the frozen face
coefficient h_p'((c_lo + c_hi)/2) and the electromigration drift explicitly
with upwinding; the potential is re-solved from the updated concentrations
(first-order splitting).  The state update is applied in flux form -- every
face flux enters its two cells with opposite signs -- so each species' total
mass telescopes exactly regardless of linear-solver residuals.

A fully explicit mode (exact h_p face differences, diffusive CFL) exists for
cross-validation at small time steps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sparse
from scipy.sparse.linalg import splu

from .diagnostics import DiagnosticsRecord, energy_value, face_gradient_l2
from .errors import ConfigError, SolverError, TimeStepError
from .linalg import ZeroMeanDirect, face_laplacian

NEG_TOLERANCE = 1e-12     # accepted round-off undershoot of concentrations
DT_FLOOR = 1e-10          # abort threshold for the step-halving loop
CFL_SAFETY = 0.4          # dt <= CFL_SAFETY * h / max face drift speed


def h_p_eval(r, eta: float, p: float):
    """Nonlinear diffusion primitive h_p(r) = r + eta r^p for r >= 0."""
    arr = np.asarray(r, dtype=float)
    if np.any(arr < 0):
        raise ValueError("h_p is only defined for r >= 0")
    value = arr + eta * arr ** p
    return float(value) if np.isscalar(r) else value


def h_p_prime(r, eta: float, p: float):
    """Derivative h_p'(r) = 1 + eta p r^(p-1) >= 1 for r >= 0."""
    arr = np.asarray(r, dtype=float)
    if np.any(arr < 0):
        raise ValueError("h_p' is only defined for r >= 0")
    value = 1.0 + eta * p * arr ** (p - 1.0)
    return float(value) if np.isscalar(r) else value


class _StepRejected(Exception):
    """Internal: nonnegativity violated, the caller halves dt and retries."""


@dataclass
class SimState:
    """Concentrations (one row per species) and zero-mean potential at time t."""

    t: float
    conc: np.ndarray
    phi: np.ndarray

    def copy(self):
        return SimState(t=self.t, conc=self.conc.copy(), phi=self.phi.copy())


@dataclass
class RunResult:
    """Trajectory handle: final state, per-output diagnostics, step summary."""

    state: SimState
    record: DiagnosticsRecord
    summary: dict
    snapshots: dict


class TransportSim:
    """Shared machinery; subclasses supply the Poisson operator and tensor hooks.

    Subclass contract:
      _charge_rhs(conc)       finite-volume Poisson right-hand side (cell sums
                              + boundary facet terms); its plain sum is the
                              discrete compatibility residual
      _axis_diag()            per-face normal tensor coefficient (1.0 for the
                              identity tensor)
      _cross_flux(values)     per-face tangential (off-diagonal tensor) flux
                              contribution, or None
      _poisson_matrix()       singular Neumann operator consistent with
                              _charge_rhs
    """

    def __init__(self, grid, species, eta, p, drift_scale, poisson_tol=1e-11,
                 explicit_time=False, lazy_poisson=False):
        self.grid = grid
        self.species = list(species)
        self.eta = float(eta)
        self.p = float(p)
        self.drift_scale = float(drift_scale)
        self.poisson_tol = float(poisson_tol)
        self.explicit_time = bool(explicit_time)
        self.lazy_poisson = bool(lazy_poisson)
        self.energy_prefactor = 1.0   # eps^(alpha+beta) for micro runs
        self.grad_scale = 1.0         # eps^alpha factor on the logged |grad phi|
        self._poisson = None
        self._charges = np.array([s.charge for s in self.species], dtype=float)
        self._diffusivities = np.array([s.diffusivity for s in self.species], dtype=float)

    # -- hooks ---------------------------------------------------------------

    def _charge_rhs(self, conc):
        raise NotImplementedError

    def _axis_diag(self):
        return 1.0

    def _cross_flux(self, values):
        return None

    def _poisson_matrix(self):
        raise NotImplementedError

    # -- potential -----------------------------------------------------------

    def compat_residual(self, conc) -> float:
        """Discrete compatibility: total bulk charge plus total boundary charge."""
        return float(np.sum(self._charge_rhs(conc)))

    def solve_poisson(self, conc) -> np.ndarray:
        rhs = self._charge_rhs(conc)
        residual = float(np.sum(rhs))
        scale = max(1.0, float(np.sum(np.abs(rhs))))
        if abs(residual) > 1e-10 * scale:
            raise SolverError(
                f"state corruption: compatibility residual {residual:.3e} exceeds "
                f"1e-10 relative to charge scale {scale:.3e}",
                residual=residual,
            )
        if self._poisson is None:
            self._poisson = ZeroMeanDirect(self._poisson_matrix())
        return self._poisson.solve(rhs, tol=self.poisson_tol)

    # -- face kernels ----------------------------------------------------------

    def _divergence(self, face_flux):
        """Rate of change from per-face fluxes (positive flux flows lo -> hi)."""
        grid = self.grid
        n = grid.n_fluid
        scale = grid.facet_area / grid.cell_volume
        gain = np.bincount(grid.face_hi, weights=face_flux, minlength=n)
        loss = np.bincount(grid.face_lo, weights=face_flux, minlength=n)
        return (gain - loss) * scale

    def _normal_gradient_faces(self, values):
        """(A grad u) . n per face: two-point normal part plus tangential terms."""
        grid = self.grid
        g = self._axis_diag() * (values[grid.face_hi] - values[grid.face_lo]) / grid.h
        cross = self._cross_flux(values)
        if cross is not None:
            g = g + cross
        return g

    def _drift_fluxes(self, conc, grad_phi_faces):
        """Upwinded drift flux per species, or None when drift is inactive."""
        if self.drift_scale == 0.0 or not np.any(self._charges):
            return None
        grid = self.grid
        c_lo = conc[:, grid.face_lo]
        c_hi = conc[:, grid.face_hi]
        factors = -self.drift_scale * self._diffusivities * self._charges
        velocity = factors[:, None] * grad_phi_faces[None, :]
        upwind = np.where(velocity >= 0.0, c_lo, c_hi)
        return velocity * upwind

    # -- time-step control -----------------------------------------------------

    def _max_h_prime(self, conc) -> float:
        top = float(np.max(conc)) if conc.size else 0.0
        return h_p_prime(max(top, 0.0), self.eta, self.p)

    def dt_limit(self, state: SimState) -> float:
        """Largest admissible dt at this state (drift CFL, explicit-mode bounds)."""
        grid = self.grid
        limit = np.inf
        factors = np.abs(self.drift_scale * self._diffusivities * self._charges)
        if np.any(factors > 0):
            grad = np.abs(self._normal_gradient_faces(state.phi))
            vmax = float(np.max(factors)) * (float(np.max(grad)) if grad.size else 0.0)
            if vmax > 0:
                limit = CFL_SAFETY * grid.h / vmax
        h_max = self._max_h_prime(state.conc)
        d_max = float(np.max(self._diffusivities))
        diag = np.asarray(self._axis_diag(), dtype=float)
        a_max = float(np.max(diag))
        if self.explicit_time:
            diff_limit = CFL_SAFETY * grid.h ** 2 / (2.0 * grid.dim * d_max * a_max * h_max)
            limit = min(limit, diff_limit)
        cross_mag = getattr(self, "_cross_magnitude", 0.0)
        if cross_mag > 0.0:
            limit = min(limit, 0.25 * grid.h ** 2 / (grid.dim * d_max * cross_mag * h_max))
        return limit

    # -- stepping ----------------------------------------------------------------

    def _implicit_solve(self, c, diffusivity, face_h, dt, rhs_extra):
        grid = self.grid
        kappa = diffusivity * np.asarray(self._axis_diag(), dtype=float) * face_h / grid.h ** 2
        kappa = np.broadcast_to(kappa, grid.face_lo.shape)
        matrix = face_laplacian(grid.n_fluid, grid.face_lo, grid.face_hi, kappa)
        matrix = matrix + sparse.identity(grid.n_fluid, format="csr") / dt
        rhs = c / dt + rhs_extra
        try:
            return splu(matrix.tocsc()).solve(rhs)
        except RuntimeError as exc:
            raise SolverError(f"implicit transport solve failed: {exc}") from exc

    def step(self, state: SimState, dt: float, source=None) -> SimState:
        """One IMEX (or fully explicit) step of size dt; raises on dt rejection.

        Nonnegativity guard: a result dipping below -1e-12 raises an internal
        rejection that the run loop converts into dt halving.
        """
        grid = self.grid
        conc = state.conc
        n_species = conc.shape[0]
        t_new = state.t + dt

        grad_phi = self._normal_gradient_faces(state.phi)
        drift = self._drift_fluxes(conc, grad_phi)
        src = None
        if source is not None:
            src = np.asarray(source(t_new, grid.centers), dtype=float)

        new_conc = np.empty_like(conc)
        c_safe = np.maximum(conc, 0.0)
        for i in range(n_species):
            d_i = self._diffusivities[i]
            flux = np.zeros(grid.face_lo.size)
            if drift is not None:
                flux += drift[i]
            if self.explicit_time:
                hp = h_p_eval(c_safe[i], self.eta, self.p)
                flux += -d_i * self._normal_gradient_faces(hp)
                update = self._divergence(flux)
                if src is not None:
                    update = update + src[i]
                new_conc[i] = conc[i] + dt * update
            else:
                hp_cross = self._cross_flux(h_p_eval(c_safe[i], self.eta, self.p))
                if hp_cross is not None:
                    flux += -d_i * hp_cross
                face_h = h_p_prime(0.5 * (c_safe[i][grid.face_lo] + c_safe[i][grid.face_hi]),
                                   self.eta, self.p)
                rhs_extra = self._divergence(flux)
                if src is not None:
                    rhs_extra = rhs_extra + src[i]
                c_star = self._implicit_solve(conc[i], d_i, face_h, dt, rhs_extra)
                diag = np.broadcast_to(np.asarray(self._axis_diag(), dtype=float),
                                       grid.face_lo.shape)
                flux += -d_i * diag * face_h * (c_star[grid.face_hi] - c_star[grid.face_lo]) / grid.h
                update = self._divergence(flux)
                if src is not None:
                    update = update + src[i]
                new_conc[i] = conc[i] + dt * update

        if float(np.min(new_conc)) < -NEG_TOLERANCE:
            raise _StepRejected

        if self.lazy_poisson:
            phi = state.phi
        else:
            phi = self.solve_poisson(new_conc)
        return SimState(t=t_new, conc=new_conc, phi=phi)

    # -- initialization and the run loop -------------------------------------------

    def initial_state(self) -> SimState:
        conc = np.stack([
            np.asarray(s.initial_profile(self.grid.centers), dtype=float)
            for s in self.species
        ])
        if float(np.min(conc)) < 0.0:
            raise ConfigError(f"initial concentrations must be nonnegative "
                              f"(min {float(np.min(conc)):.3e})")
        phi = self.solve_poisson(conc)
        return SimState(t=0.0, conc=conc, phi=phi)

    def _record_row(self, record, state, dt):
        grid = self.grid
        masses = [float(np.sum(c)) * grid.cell_volume for c in state.conc]
        energy = energy_value(grid, state.conc, state.phi, self.eta, self.p,
                              self.energy_prefactor)
        mins = [float(np.min(c)) for c in state.conc]
        maxs = [float(np.max(c)) for c in state.conc]
        grad_phi = self.grad_scale * face_gradient_l2(grid, state.phi)
        grad_c = [face_gradient_l2(grid, c) for c in state.conc]
        record.add_row(state.t, masses, energy, mins, maxs,
                       float(np.mean(state.phi)), self.compat_residual(state.conc),
                       grad_phi, grad_c, dt)

    def run(self, final_time, dt_init, cfl_fraction=0.5, output_interval=None,
            snapshot_times=(), source=None) -> RunResult:
        """Integrate to ``final_time`` recording diagnostics at output times.

        dt policy per step: min(dt_init, cfl_fraction * CFL limit, distance to
        the next output/snapshot boundary), with automatic halving on
        nonnegativity rejection down to a floor of 1e-10.
        """
        if final_time < 0:
            raise ValueError("final_time must be >= 0")
        events = {float(final_time)}
        if output_interval:
            count = int(np.floor(final_time / output_interval + 1e-9))
            events.update(float((k + 1) * output_interval) for k in range(count))
        snap_set = []
        for t_snap in snapshot_times:
            t_snap = float(t_snap)
            if t_snap < -1e-12 or t_snap > final_time + 1e-12:
                raise ValueError(f"snapshot time {t_snap} outside [0, T]")
            events.add(t_snap)
            snap_set.append(t_snap)
        merge_tol = 1e-9 * max(1.0, final_time)
        event_list = []
        for event in sorted(events):
            if event <= merge_tol:
                continue
            if not event_list or event - event_list[-1] > merge_tol:
                event_list.append(event)

        state = self.initial_state()
        record = DiagnosticsRecord(species_names=tuple(s.name for s in self.species))
        self._record_row(record, state, 0.0)
        snapshots = {}
        if any(abs(t_snap) <= merge_tol for t_snap in snap_set):
            snapshots[0.0] = state.copy()

        initial_masses = np.array([np.sum(c) for c in state.conc]) * self.grid.cell_volume
        mass_scale = np.maximum(np.abs(initial_masses), 1e-300)
        energy_0 = record.energies[0]

        def entropy_pnorm(conc):
            # eta/(p-1) ||c_i||_p^p, the p-norm term bounded by the initial energy
            powers = np.sum(np.maximum(conc, 0.0) ** self.p, axis=1) * self.grid.cell_volume
            return float(np.max(powers)) * self.eta / (self.p - 1.0)

        summary = {
            "min_c": float(np.min(state.conc)),
            "max_c": float(np.max(state.conc)),
            "initial_max_c": float(np.max(state.conc)),
            "max_mass_drift_rel": 0.0,
            "max_step_mass_drift_rel": 0.0,
            "max_compat_residual": abs(record.compat_residuals[0]),
            "max_energy_increase_rel": 0.0,
            "energy_initial": energy_0,
            "max_entropy_pnorm": entropy_pnorm(state.conc),
            "steps": 0,
            "rejections": 0,
            "dt_min_used": np.inf,
            "dt_max_used": 0.0,
            "source_active": source is not None,
        }

        energy_prev = energy_0
        prev_masses = initial_masses.copy()
        last_dt = 0.0
        time_tol = 1e-12 * max(1.0, final_time)
        for t_event in event_list:
            while state.t < t_event - time_tol:
                dt_policy = min(dt_init, cfl_fraction * self.dt_limit(state))
                dt = min(dt_policy, t_event - state.t)
                while True:
                    try:
                        new_state = self.step(state, dt, source=source)
                        break
                    except _StepRejected:
                        dt *= 0.5
                        summary["rejections"] += 1
                        if dt < DT_FLOOR:
                            raise TimeStepError(
                                f"time step fell below {DT_FLOOR:g} at t = {state.t:.6g} "
                                "without restoring nonnegativity"
                            )
                state = new_state
                if abs(state.t - t_event) <= time_tol:
                    state.t = t_event
                last_dt = dt
                summary["steps"] += 1
                summary["dt_min_used"] = min(summary["dt_min_used"], dt)
                summary["dt_max_used"] = max(summary["dt_max_used"], dt)
                summary["min_c"] = min(summary["min_c"], float(np.min(state.conc)))
                summary["max_c"] = max(summary["max_c"], float(np.max(state.conc)))
                summary["max_entropy_pnorm"] = max(summary["max_entropy_pnorm"],
                                                   entropy_pnorm(state.conc))
                masses = np.array([np.sum(c) for c in state.conc]) * self.grid.cell_volume
                if source is None:
                    drift = float(np.max(np.abs(masses - initial_masses) / mass_scale))
                    step_drift = float(np.max(np.abs(masses - prev_masses) / mass_scale))
                    summary["max_mass_drift_rel"] = max(summary["max_mass_drift_rel"], drift)
                    summary["max_step_mass_drift_rel"] = max(
                        summary["max_step_mass_drift_rel"], step_drift)
                prev_masses = masses
                summary["max_compat_residual"] = max(
                    summary["max_compat_residual"], abs(self.compat_residual(state.conc)))
                if not self.lazy_poisson:
                    energy = energy_value(self.grid, state.conc, state.phi,
                                          self.eta, self.p, self.energy_prefactor)
                    if energy_0 > 0:
                        summary["max_energy_increase_rel"] = max(
                            summary["max_energy_increase_rel"],
                            (energy - energy_prev) / energy_0)
                    energy_prev = energy
            # refresh the potential if the stepper runs with a lazy Poisson solve
            if self.lazy_poisson:
                state = SimState(state.t, state.conc, self.solve_poisson(state.conc))
            self._record_row(record, state, last_dt)
            if any(abs(t_event - ts) <= merge_tol for ts in snap_set):
                snapshots[t_event] = state.copy()

        if summary["steps"] == 0:
            summary["dt_min_used"] = 0.0
        return RunResult(state=state, record=record, summary=summary, snapshots=snapshots)
