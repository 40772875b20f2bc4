"""Two-dimensional flood / debris-flow solver on a raster DEM.

Depth-averaged flow with a sediment-concentration field over an erodible
bed. The conserved vector per cell is (h, uh, vh, Ch, z_b); fluxes carry
advection and hydrostatic pressure, sources carry bed slope, friction,
momentum diffusion, and erosion/deposition exchange with the bed. Time
integration is the explicit two-step predictor-corrector (MacCormack)
scheme with sensor-scaled artificial viscosity applied in flux form.

Conventions:
  - values[i, j]: i = row, j = column; u is velocity along +columns,
    v is velocity along +rows; cellsize is the spacing in both directions.
  - Boundaries are open: one ring of edge-replicated ghost cells gives a
    zero-gradient outflow condition on all four sides.
  - The bed-slope source is differenced against the water surface using
    the face-averaged depth, so a lake at rest is preserved exactly;
    bed steps rising above a dry neighbour's surface are clipped to the
    surface ("wall" treatment at wet/dry fronts).
  - The fluidization fraction converts part of the fine solid material
    into fluid: it raises the effective fluid specific weight and lowers
    the effective deposited-bed concentration (see effective_medium);
    the rheology below uses the effective values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .grid import Raster


class SolverError(RuntimeError):
    """Raised when the solver produces a non-finite value."""


class FlowMode(IntEnum):
    WATER = 0
    HYPER_CONCENTRATED = 1
    STONY_DEBRIS = 2


@dataclass
class SimParams:
    """Physical and numerical constants of the solver.

    Specific weights are relative to water (water = 1). The fluidization
    rate is the fraction of fine solids treated as fluid; deposited-bed
    concentration and fluid density are derived from it via
    effective_medium().
    """

    g: float = 9.81              # gravity, m/s^2
    eps_diff: float = 1.0       # eddy momentum diffusivity, m^2/s
    sigma: float = 2.65         # sediment specific weight (relative)
    rho0: float = 1.0           # water specific weight (relative)
    cstar0: float = 0.6         # sediment concentration of the undisturbed bed
    gamma: float = 0.0          # fluidization rate, [0, 1)
    d_m: float = 0.05           # representative grain diameter, m
    manning_n: float = 0.03     # Manning roughness of the water mode
    tan_phi: float = 0.7        # tangent of the internal friction angle
    delta_e: float = 0.0007     # erosion rate coefficient
    delta_d: float = 0.05       # deposition rate coefficient
    h_min: float = 1e-4         # dry-cell depth threshold, m
    cfl: float = 0.2            # Courant number
    visc_kappa: float = 0.1     # artificial viscosity coefficient
    c_water: float = 0.02       # C at or below -> water mode
    c_stony_frac: float = 0.4   # C >= frac * C_eff -> stony mode
    dt_max: float = 0.5         # time-step cap, s
    bedrock_depth: float = 10.0  # erosion floor below the initial bed, m

    def validate(self) -> None:
        if not (0 <= self.gamma < 1):
            raise ValueError(f"gamma must be in [0, 1), got {self.gamma}")
        if not (0 < self.cstar0 < 1):
            raise ValueError(f"cstar0 must be in (0, 1), got {self.cstar0}")
        if not (0 < self.cfl < 1):
            raise ValueError(f"cfl must be in (0, 1), got {self.cfl}")
        for name in ("g", "sigma", "rho0", "d_m", "tan_phi", "h_min", "dt_max"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("eps_diff", "manning_n", "delta_e", "delta_d", "visc_kappa",
                     "c_water", "bedrock_depth"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.sigma <= self.rho0:
            raise ValueError("sediment must be denser than water")


def effective_medium(params: SimParams) -> tuple[float, float]:
    """Effective fluid specific weight and deposited-bed concentration.

    Fluidizing a fraction of the fine solids moves them from the bed
    budget into the fluid: rho rises, the effective bed concentration
    falls. At zero fluidization this returns (rho0, cstar0).
    """
    gam, c0, rho0, sig = params.gamma, params.cstar0, params.rho0, params.sigma
    rho = (gam * sig * c0 + rho0 * (1 - c0)) / (gam * c0 + (1 - c0))
    cstar = c0 * (1 - gam)
    return rho, cstar


def classify_flow_mode(C, cstar: float, params: SimParams):
    """Flow regime from sediment concentration.

    Stony debris at C >= c_stony_frac * cstar, water at C <= c_water,
    hyper-concentrated between. Works elementwise on arrays; scalars
    come back as FlowMode.
    """
    C = np.asarray(C)
    mode = np.full(C.shape, int(FlowMode.HYPER_CONCENTRATED), dtype=np.int8)
    mode[C <= params.c_water] = int(FlowMode.WATER)
    mode[C >= params.c_stony_frac * cstar] = int(FlowMode.STONY_DEBRIS)
    if mode.ndim == 0:
        return FlowMode(int(mode))
    return mode


def friction_gradient(h, u, v, C, rho: float, cstar: float, params: SimParams):
    """Frictional slopes (Sfx, Sfy) per cell, switched by flow regime.

    Water: Manning. Hyper-concentrated: immature-flow closure. Stony
    debris: dilatant-flow closure. All closures vanish at rest. Inputs are
    assumed wet; the caller masks dry cells. The stony closure diverges as
    C -> cstar (flow locks up); callers clamp the resulting impulse.
    """
    h = np.asarray(h, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    C = np.asarray(C, dtype=np.float64)
    speed = np.hypot(u, v)
    g, dm = params.g, params.d_m

    mode = classify_flow_mode(C, cstar, params)
    mode = np.asarray(mode, dtype=np.int8)
    h3 = h * h * h

    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        water = params.manning_n ** 2 * speed / (np.cbrt(h) * h)
        hyper = speed * dm ** 2 / (0.49 * g * h3)
        Cs = np.clip(C, 1e-12, None)
        dilat_gap = np.clip(np.cbrt(cstar / Cs) - 1.0, 1e-12, None)
        stony = speed * dm ** 2 / (
            8.0 * g * h3 * (Cs + (1 - Cs) * rho / params.sigma) * dilat_gap ** 2
        )
    coeff = np.where(mode == FlowMode.WATER, water,
                     np.where(mode == FlowMode.STONY_DEBRIS, stony, hyper))
    coeff = np.where(np.isfinite(coeff), coeff, 0.0)
    return coeff * u, coeff * v


def equilibrium_concentration(tan_theta_w, rho: float, cstar: float, params: SimParams):
    """Equilibrium sediment concentration from the water-surface slope.

    Below the friction slope the concentration follows the force balance
    of the interstitial fluid; at or above it the flow saturates. The
    result is clamped to [0, 0.9 * cstar].
    """
    tw = np.asarray(tan_theta_w, dtype=np.float64)
    tphi = params.tan_phi
    with np.errstate(divide="ignore", invalid="ignore"):
        ceq = rho * tw / ((params.sigma - rho) * (tphi - tw))
    ceq = np.where(tw >= tphi, 0.9 * cstar, ceq)
    return np.clip(ceq, 0.0, 0.9 * cstar)


def erosion_deposition_velocity(speed, C, c_eq, params: SimParams,
                                erosion_headroom=None, deposition_headroom=None,
                                dt: float | None = None):
    """Bed-exchange velocity i (m/s): positive erodes, negative deposits.

    i = delta_e * (C_eq - C) * |V| when the flow is under-saturated,
    i = delta_d * (C_eq - C) * |V| otherwise. With a time step and
    headrooms given, erosion is limited so the bed cannot drop below the
    bedrock floor and deposition cannot exceed the flow volume or the
    suspended sediment mass.
    """
    speed = np.asarray(speed, dtype=np.float64)
    gap = np.asarray(c_eq, dtype=np.float64) - np.asarray(C, dtype=np.float64)
    rate = np.where(gap > 0, params.delta_e, params.delta_d)
    i = rate * gap * speed
    if dt is not None:
        if erosion_headroom is not None:
            i = np.minimum(i, np.maximum(erosion_headroom, 0.0) / dt)
        if deposition_headroom is not None:
            i = np.maximum(i, -np.maximum(deposition_headroom, 0.0) / dt)
    return i


def compute_fluxes(h, u, v, C, g: float):
    """Physical fluxes (E, F) of the five conserved components.

    E = (uh, u^2 h + g h^2 / 2, uvh, Cuh, 0) along columns,
    F = (vh, uvh, v^2 h + g h^2 / 2, Cvh, 0) along rows.
    The bed elevation carries no flux.
    """
    h = np.asarray(h, dtype=np.float64)
    hu = u * h
    hv = v * h
    p = 0.5 * g * h * h
    zero = np.zeros_like(h)
    E = (hu, hu * u + p, hu * v, hu * C, zero)
    F = (hv, hv * u, hv * v + p, hv * C, zero)
    return E, F


@dataclass
class FlowState:
    """Per-cell flow depth, velocities, concentration, and bed elevation."""

    h: np.ndarray
    u: np.ndarray
    v: np.ndarray
    C: np.ndarray
    z_b: np.ndarray
    cellsize: float

    @staticmethod
    def dry(dem: Raster) -> "FlowState":
        """All-dry state over a DEM (nodata treated as elevation 0)."""
        z = np.where(dem.nodata_mask(), 0.0, dem.values).astype(np.float64)
        zero = np.zeros_like(z)
        return FlowState(h=zero.copy(), u=zero.copy(), v=zero.copy(),
                         C=zero.copy(), z_b=z, cellsize=dem.cellsize)

    def copy(self) -> "FlowState":
        return FlowState(self.h.copy(), self.u.copy(), self.v.copy(),
                         self.C.copy(), self.z_b.copy(), self.cellsize)

    def wet(self, h_min: float) -> np.ndarray:
        return self.h >= h_min


@dataclass
class SupplySpec:
    """Inflow at one cell with a piecewise-linear hydrograph.

    hydrograph entries are (time s, discharge m^3/s, sediment
    concentration); times must be strictly increasing and discharge is
    zero outside the covered interval.
    """

    cell: tuple[int, int]
    hydrograph: list[tuple[float, float, float]]

    def __post_init__(self):
        times = [t for t, _, _ in self.hydrograph]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("hydrograph times must be strictly increasing")
        if any(q < 0 for _, q, _ in self.hydrograph):
            raise ValueError("discharge must be non-negative")

    def discharge_at(self, t: float) -> tuple[float, float]:
        """(Q, C) linearly interpolated, zero outside the hydrograph."""
        hg = self.hydrograph
        if not hg or t < hg[0][0] or t > hg[-1][0]:
            return 0.0, 0.0
        times = [p[0] for p in hg]
        k = max(0, min(len(hg) - 2, np.searchsorted(times, t, side="right") - 1))
        t0, q0, c0 = hg[k]
        t1, q1, c1 = hg[k + 1]
        w = (t - t0) / (t1 - t0)
        return q0 + w * (q1 - q0), c0 + w * (c1 - c0)

    def integrated_inflow(self, t0: float, t1: float) -> tuple[float, float]:
        """Exact (volume, sediment volume) of the hydrograph over [t0, t1].

        Q is piecewise linear, so the volume is a trapezoid per segment;
        Q*C is piecewise quadratic, integrated exactly with Simpson.
        """
        if not self.hydrograph or t1 <= t0:
            return 0.0, 0.0
        knots = [p[0] for p in self.hydrograph]
        cuts = sorted({t0, t1, *[t for t in knots if t0 < t < t1]})
        vol = 0.0
        sed = 0.0
        for a, b in zip(cuts, cuts[1:]):
            qa, ca = self.discharge_at(a)
            qb, cb = self.discharge_at(b)
            qm, cm = self.discharge_at(0.5 * (a + b))
            vol += 0.5 * (qa + qb) * (b - a)
            sed += (b - a) / 6.0 * (qa * ca + 4.0 * qm * cm + qb * cb)
        return vol, sed

    def total_inflow(self) -> tuple[float, float]:
        if not self.hydrograph:
            return 0.0, 0.0
        return self.integrated_inflow(self.hydrograph[0][0], self.hydrograph[-1][0])


@dataclass
class MassLedger:
    """Running volume accounting of a simulation.

    Water and sediment are tracked separately: suspended load, bed
    exchange, boundary outflow, and numerical clamp residuals (volume
    created by positivity/saturation clamps; ~0 on healthy runs).
    """

    injected_water: float = 0.0
    injected_sediment: float = 0.0
    outflow_water: float = 0.0
    outflow_sediment: float = 0.0
    stored_water: float = 0.0
    stored_sediment: float = 0.0
    clamp_water: float = 0.0
    clamp_sediment: float = 0.0
    steps: int = 0
    sim_time: float = 0.0

    def water_closure(self) -> float:
        """|in - stored - out| relative to injected water."""
        gap = abs(self.injected_water - self.stored_water - self.outflow_water)
        return gap / self.injected_water if self.injected_water > 0 else gap

    def sediment_closure(self) -> float:
        gap = abs(self.injected_sediment - self.stored_sediment - self.outflow_sediment)
        return gap / self.injected_sediment if self.injected_sediment > 0 else gap

    def as_dict(self) -> dict:
        return {
            "injected_water": self.injected_water,
            "injected_sediment": self.injected_sediment,
            "outflow_water": self.outflow_water,
            "outflow_sediment": self.outflow_sediment,
            "stored_water": self.stored_water,
            "stored_sediment": self.stored_sediment,
            "clamp_water": self.clamp_water,
            "clamp_sediment": self.clamp_sediment,
            "water_closure": self.water_closure(),
            "sediment_closure": self.sediment_closure(),
            "steps": self.steps,
            "sim_time": self.sim_time,
        }


@dataclass
class SimOutputs:
    """Target grids of one run: running-max flow depth and bed change."""

    max_water_level: Raster
    deformation: Raster
    ledger: MassLedger


def stable_dt(state: FlowState, params: SimParams) -> float:
    """CFL-limited time step from the fastest wet-cell signal speed."""
    wet = state.wet(params.h_min)
    if not wet.any():
        return params.dt_max
    c = np.sqrt(params.g * state.h[wet])
    fastest = max(
        float(np.max(np.abs(state.u[wet]) + c)),
        float(np.max(np.abs(state.v[wet]) + c)),
    )
    if fastest <= 0:
        return params.dt_max
    return min(params.cfl * state.cellsize / fastest, params.dt_max)


def apply_supplies(state: FlowState, supplies, t: float, dt: float,
                   ledger: MassLedger | None = None) -> FlowState:
    """Add supply inflow over [t, t+dt] to the flow.

    The hydrograph is integrated exactly over the window; the volume
    lands on the supply cell as depth, the sediment as suspended mass.
    """
    out = state.copy()
    area = state.cellsize ** 2
    for sup in supplies:
        vol, sed = sup.integrated_inflow(t, t + dt)
        if vol <= 0:
            continue
        r, c = sup.cell
        h0 = out.h[r, c]
        hc0 = out.C[r, c] * h0
        h1 = h0 + vol / area
        hc1 = hc0 + sed / area
        out.h[r, c] = h1
        out.C[r, c] = hc1 / h1 if h1 > 0 else 0.0
        if ledger is not None:
            ledger.injected_water += vol - sed
            ledger.injected_sediment += sed
    return out


def _pad(a: np.ndarray) -> np.ndarray:
    return np.pad(a, 1, mode="edge")


def _settle_negatives(a: np.ndarray) -> float:
    """Zero out negative cells, recovering the deficit by scaling the
    positive cells down proportionally (exactly volume-neutral). Returns
    any amount that could not be recovered (ledger clamp residual)."""
    neg = a < 0
    if not neg.any():
        return 0.0
    deficit = float(-a[neg].sum())
    a[neg] = 0.0
    total = float(a.sum())
    if total >= deficit and total > 0:
        a *= 1.0 - deficit / total
        return 0.0
    a[:] = 0.0
    return deficit - total


def _settle_saturation(hc: np.ndarray, h: np.ndarray, cstar: float) -> float:
    """Cap suspended sediment at saturation, respreading the excess over
    cells with headroom (exactly volume-neutral). Returns the destroyed
    amount when the whole grid is saturated (ledger clamp residual)."""
    cap = cstar * h
    excess = hc - cap
    over = excess > 0
    if not over.any():
        return 0.0
    pool = float(excess[over].sum())
    hc[over] = cap[over]
    headroom = cap - hc
    total = float(headroom.sum())
    if total >= pool and total > 0:
        hc += headroom * (pool / total)
        return 0.0
    hc += headroom
    return -(pool - total)


class _StepAccounting:
    """Boundary fluxes and clamp residuals of one step (area-less units)."""

    def __init__(self):
        self.out_water = 0.0
        self.out_sediment = 0.0
        self.created_water = 0.0
        self.created_sediment = 0.0


def _substep(h, hu, hv, hc, zb, dt, dx, params: SimParams, rho, cstar,
             forward: bool, bedrock, acct: _StepAccounting):
    """One MacCormack half step (forward or backward differences).

    The hydrostatic pressure gradient and the bed-slope source are paired
    in factored form, -g * hbar * d(h + z_b), which is algebraically the
    flux-difference-plus-source of the governing equations but cancels
    exactly over a flat water surface. Bed steps rising above a dry
    neighbour's surface contribute no force (shoreline walls).
    """
    g = params.g
    lam = dt / dx
    hp, hup, hvp, hcp, zbp = np.pad(
        np.stack((h, hu, hv, hc, zb)), ((0, 0), (1, 1), (1, 1)), mode="edge"
    )

    wet_p = hp >= params.h_min
    hp_safe = np.where(wet_p, hp, 1.0)
    up = np.where(wet_p, hup / hp_safe, 0.0)
    vp = np.where(wet_p, hvp / hp_safe, 0.0)
    eta = zbp + hp

    # advective fluxes (the pressure part lives in the factored source);
    # the sediment flux u*(Ch) equals (uh)*C exactly
    E1, E2, E3, E4 = hup, hup * up, hup * vp, up * hcp
    F1, F2, F3, F4 = hvp, hvp * up, hvp * vp, vp * hcp

    if forward:
        dE = [e[1:-1, 2:] - e[1:-1, 1:-1] for e in (E1, E2, E3, E4)]
        dF = [f[2:, 1:-1] - f[1:-1, 1:-1] for f in (F1, F2, F3, F4)]
    else:
        dE = [e[1:-1, 1:-1] - e[1:-1, :-2] for e in (E1, E2, E3, E4)]
        dF = [f[1:-1, 1:-1] - f[:-2, 1:-1] for f in (F1, F2, F3, F4)]

    hC = hp[1:-1, 1:-1]
    zC = zbp[1:-1, 1:-1]
    etaC = eta[1:-1, 1:-1]
    if forward:
        hX, zX, wetX = hp[1:-1, 2:], zbp[1:-1, 2:], wet_p[1:-1, 2:]
        hY, zY, wetY = hp[2:, 1:-1], zbp[2:, 1:-1], wet_p[2:, 1:-1]
        sgn = 1.0
    else:
        hX, zX, wetX = hp[1:-1, :-2], zbp[1:-1, :-2], wet_p[1:-1, :-2]
        hY, zY, wetY = hp[:-2, 1:-1], zbp[:-2, 1:-1], wet_p[:-2, 1:-1]
        sgn = -1.0
    wall_x = ~wetX & (zX > etaC)
    wall_y = ~wetY & (zY > etaC)
    deta_x = np.where(wall_x, 0.0, (hX - hC) + (zX - zC))
    deta_y = np.where(wall_y, 0.0, (hY - hC) + (zY - zC))
    force_x = -g * 0.5 * (hC + hX) * sgn * deta_x / dx
    force_y = -g * 0.5 * (hC + hY) * sgn * deta_y / dx

    # eddy momentum diffusion, 5-point Laplacian
    eps = params.eps_diff
    if eps > 0:
        lap_hu = (hup[1:-1, 2:] + hup[1:-1, :-2] + hup[2:, 1:-1] + hup[:-2, 1:-1]
                  - 4 * hup[1:-1, 1:-1]) / dx ** 2
        lap_hv = (hvp[1:-1, 2:] + hvp[1:-1, :-2] + hvp[2:, 1:-1] + hvp[:-2, 1:-1]
                  - 4 * hvp[1:-1, 1:-1]) / dx ** 2
        diff_x = eps * lap_hu
        diff_y = eps * lap_hv
    else:
        diff_x = diff_y = 0.0

    uC = up[1:-1, 1:-1]
    vC = vp[1:-1, 1:-1]
    wetC = wet_p[1:-1, 1:-1]
    huC = hup[1:-1, 1:-1]
    hvC = hvp[1:-1, 1:-1]
    hcC = hcp[1:-1, 1:-1]
    widx = np.flatnonzero(wetC.ravel())

    # friction (arrest-limited so it can only stop the flow, not reverse
    # it); evaluated on wet cells only
    fric_x = np.zeros_like(hC)
    fric_y = np.zeros_like(hC)
    if widx.size:
        hW = hC.ravel()[widx]
        uW = uC.ravel()[widx]
        vW = vC.ravel()[widx]
        CW = np.minimum(hcC.ravel()[widx] / hW, cstar)
        sfx, sfy = friction_gradient(hW, uW, vW, CW, rho, cstar, params)
        huW = huC.ravel()[widx]
        hvW = hvC.ravel()[widx]
        fx = np.clip(-dt * g * hW * sfx, -np.abs(huW), np.abs(huW))
        fy = np.clip(-dt * g * hW * sfy, -np.abs(hvW), np.abs(hvW))
        fric_x.ravel()[widx] = fx
        fric_y.ravel()[widx] = fy

    # erosion / deposition from the water-surface slope along the flow
    ivel = np.zeros_like(hC)
    if widx.size and (params.delta_e > 0 or params.delta_d > 0):
        speedW = np.hypot(uW, vW)
        deta_dx = (eta[1:-1, 2:] - eta[1:-1, :-2]).ravel()[widx] / (2 * dx)
        deta_dy = (eta[2:, 1:-1] - eta[:-2, 1:-1]).ravel()[widx] / (2 * dx)
        speed_safe = np.where(speedW > 0, speedW, 1.0)
        tan_tw = np.maximum(-(deta_dx * uW + deta_dy * vW) / speed_safe, 0.0)
        ceq = equilibrium_concentration(tan_tw, rho, cstar, params)
        hcW = hcC.ravel()[widx]
        iW = erosion_deposition_velocity(
            speedW, CW, ceq, params,
            erosion_headroom=(zC - bedrock).ravel()[widx],
            deposition_headroom=np.minimum(hW, hcW / cstar),
            dt=dt,
        )
        ivel.ravel()[widx] = iW

    h_new = h - lam * (dE[0] + dF[0]) + dt * ivel
    hu_new = np.where(wetC, hu - lam * (dE[1] + dF[1]) + dt * (force_x + diff_x) + fric_x, hu)
    hv_new = np.where(wetC, hv - lam * (dE[2] + dF[2]) + dt * (force_y + diff_y) + fric_y, hv)
    hc_new = hc - lam * (dE[3] + dF[3]) + dt * ivel * cstar
    zb_new = zb - dt * ivel

    # boundary flux bookkeeping: the flux differences telescope to the
    # edge values, so the net outflow is the edge-column E (and edge-row
    # F) sums; accumulated in depth units, converted to volume later
    water_E = E1 - E4
    water_F = F1 - F4
    acct.out_water += 0.5 * lam * (
        float(np.sum(water_E[1:-1, -2] - water_E[1:-1, 1]))
        + float(np.sum(water_F[-2, 1:-1] - water_F[1, 1:-1]))
    )
    acct.out_sediment += 0.5 * lam * (
        float(np.sum(E4[1:-1, -2] - E4[1:-1, 1]))
        + float(np.sum(F4[-2, 1:-1] - F4[1, 1:-1]))
    )

    acct.created_water += _settle_negatives(h_new)
    acct.created_sediment += _settle_negatives(hc_new)
    acct.created_sediment += _settle_saturation(hc_new, h_new, cstar)
    return h_new, hu_new, hv_new, hc_new, zb_new


def _artificial_viscosity(h, hu, hv, hc, zb, params: SimParams, acct: _StepAccounting):
    """Sensor-scaled smoothing in flux form.

    The sensor is the normalized second difference of the water surface,
    so still water over arbitrary bathymetry generates no fluxes; the
    continuity flux also moves along surface differences and carries
    sediment at the donor concentration. Face fluxes cancel pairwise, so
    total volume is untouched; replicated ghosts keep boundary faces
    inactive.
    """
    kappa = params.visc_kappa
    if kappa <= 0:
        return h, hu, hv, hc
    for axis in (1, 0):
        eta = zb + h
        etap, hp, hcp, hup, hvp = np.pad(
            np.stack((eta, h, hc, hu, hv)), ((0, 0), (1, 1), (1, 1)), mode="edge"
        )
        if axis == 1:
            em, e0, ep = etap[1:-1, :-2], etap[1:-1, 1:-1], etap[1:-1, 2:]
        else:
            em, e0, ep = etap[:-2, 1:-1], etap[1:-1, 1:-1], etap[2:, 1:-1]
        d2 = np.abs(ep - 2 * e0 + em)
        denom = np.abs(ep - e0) + np.abs(e0 - em) + 1e-12
        sp = _pad(d2 / denom)

        if axis == 1:
            s_face = np.maximum(sp[1:-1, :-1], sp[1:-1, 1:])   # faces, cols+1
            deta = etap[1:-1, 1:] - etap[1:-1, :-1]
            hL, hR = hp[1:-1, :-1], hp[1:-1, 1:]
            hcL, hcR = hcp[1:-1, :-1], hcp[1:-1, 1:]
            dhu = hup[1:-1, 1:] - hup[1:-1, :-1]
            dhv = hvp[1:-1, 1:] - hvp[1:-1, :-1]
        else:
            s_face = np.maximum(sp[:-1, 1:-1], sp[1:, 1:-1])
            deta = etap[1:, 1:-1] - etap[:-1, 1:-1]
            hL, hR = hp[:-1, 1:-1], hp[1:, 1:-1]
            hcL, hcR = hcp[:-1, 1:-1], hcp[1:, 1:-1]
            dhu = hup[1:, 1:-1] - hup[:-1, 1:-1]
            dhv = hvp[1:, 1:-1] - hvp[:-1, 1:-1]

        # positive flux moves mass from the high-surface (right) side into
        # the left cell; limit to a quarter of the donor's depth and carry
        # sediment at the donor's concentration
        f_h = kappa * s_face * deta
        f_h = np.where(f_h > 0, np.minimum(f_h, 0.25 * hR),
                       np.maximum(f_h, -0.25 * hL))
        donor_h = np.where(f_h > 0, hR, hL)
        donor_hc = np.where(f_h > 0, hcR, hcL)
        donor_C = np.where(donor_h > 0, donor_hc / np.where(donor_h > 0, donor_h, 1.0), 0.0)
        f_hc = f_h * donor_C
        f_hu = kappa * s_face * dhu
        f_hv = kappa * s_face * dhv

        for arr, flux in ((h, f_h), (hc, f_hc), (hu, f_hu), (hv, f_hv)):
            if axis == 1:
                arr += flux[:, 1:] - flux[:, :-1]
            else:
                arr += flux[1:, :] - flux[:-1, :]
    return h, hu, hv, hc


def maccormack_step(state: FlowState, dt: float, params: SimParams,
                    bedrock: np.ndarray | None = None,
                    ledger: MassLedger | None = None,
                    step_index: int = 0) -> FlowState:
    """Advance the flow by one predictor-corrector step.

    Predictor: forward differences of the fluxes and explicit sources on
    the current state. Corrector: backward differences on the predicted
    state. The result is the average of the current and corrected states,
    then artificial viscosity, positivity/saturation clamps, and zero
    velocities on dry cells. Raises SolverError with the offending cell
    if a non-finite value appears.
    """
    rho, cstar = effective_medium(params)
    dx = state.cellsize
    if bedrock is None:
        bedrock = state.z_b - params.bedrock_depth
    acct = _StepAccounting()

    h0 = state.h.copy()
    hu0 = state.u * state.h
    hv0 = state.v * state.h
    hc0 = state.C * state.h
    zb0 = state.z_b.copy()

    hs, hus, hvs, hcs, zbs = _substep(h0, hu0, hv0, hc0, zb0, dt, dx, params,
                                      rho, cstar, True, bedrock, acct)
    hcor, hucor, hvcor, hccor, zbcor = _substep(hs, hus, hvs, hcs, zbs, dt, dx, params,
                                                rho, cstar, False, bedrock, acct)

    h1 = 0.5 * (h0 + hcor)
    hu1 = 0.5 * (hu0 + hucor)
    hv1 = 0.5 * (hv0 + hvcor)
    hc1 = 0.5 * (hc0 + hccor)
    zb1 = 0.5 * (zb0 + zbcor)

    h1, hu1, hv1, hc1 = _artificial_viscosity(h1, hu1, hv1, hc1, zb1, params, acct)

    acct.created_water += _settle_negatives(h1)
    acct.created_sediment += _settle_negatives(hc1)
    acct.created_sediment += _settle_saturation(hc1, h1, cstar)

    wet = h1 >= params.h_min
    h_safe = np.where(wet, h1, 1.0)
    u1 = np.where(wet, hu1 / h_safe, 0.0)
    v1 = np.where(wet, hv1 / h_safe, 0.0)
    # after the saturation cap hc <= cstar * h holds exactly, so the ratio
    # is bounded even for films far below the dry threshold
    C1 = np.where(h1 > 0, hc1 / np.where(h1 > 0, h1, 1.0), 0.0)
    C1 = np.clip(C1, 0.0, cstar)

    for name, arr in (("h", h1), ("u", u1), ("v", v1), ("C", C1), ("z_b", zb1)):
        if not np.all(np.isfinite(arr)):
            r, c = np.argwhere(~np.isfinite(arr))[0]
            raise SolverError(
                f"non-finite {name} at cell ({r}, {c}) after step {step_index}"
            )

    if ledger is not None:
        area = dx * dx
        ledger.outflow_water += acct.out_water * area
        ledger.outflow_sediment += acct.out_sediment * area
        ledger.clamp_water += acct.created_water * area
        ledger.clamp_sediment += acct.created_sediment * area

    return FlowState(h=h1, u=u1, v=v1, C=C1, z_b=zb1, cellsize=dx)


def run_simulation(dem: Raster, supplies, params: SimParams, duration: float,
                   max_steps: int | None = None,
                   initial_state: FlowState | None = None,
                   water_level_mode: str = "depth") -> SimOutputs:
    """Run the solver and collect the target grids and mass ledger.

    Time stepping uses the CFL bound (plus a diffusive bound when the
    eddy diffusivity is active); open boundaries let flow leave the grid.
    The maximum water level is the per-cell running maximum of the flow
    depth (or of the wet-cell surface elevation with
    water_level_mode="surface"; never-wet cells stay 0 either way);
    deformation is the final minus the initial bed elevation.
    """
    params.validate()
    if water_level_mode not in ("depth", "surface"):
        raise ValueError("water_level_mode must be 'depth' or 'surface'")
    for sup in supplies:
        r, c = sup.cell
        if not (0 <= r < dem.rows and 0 <= c < dem.cols):
            raise ValueError(f"supply cell {sup.cell} outside the grid")
        if dem.values[r, c] == dem.nodata:
            raise ValueError(f"supply cell {sup.cell} sits on nodata")

    state = initial_state.copy() if initial_state is not None else FlowState.dry(dem)
    z_b0 = state.z_b.copy()
    bedrock = z_b0 - params.bedrock_depth
    ledger = MassLedger()

    def level(s: FlowState) -> np.ndarray:
        if water_level_mode == "depth":
            return s.h
        return np.where(s.h > 0, s.z_b + s.h, 0.0)

    maxwl = level(state).copy()

    t = 0.0
    step = 0
    diff_cap = 0.2 * state.cellsize ** 2 / params.eps_diff if params.eps_diff > 0 else math.inf
    while t < duration and (max_steps is None or step < max_steps):
        dt = min(stable_dt(state, params), diff_cap, duration - t)
        state = apply_supplies(state, supplies, t, dt, ledger)
        np.maximum(maxwl, level(state), out=maxwl)
        try:
            state = maccormack_step(state, dt, params, bedrock=bedrock,
                                    ledger=ledger, step_index=step)
        except SolverError as exc:
            raise SolverError(f"{exc} (t={t:.4f}s)") from exc
        np.maximum(maxwl, level(state), out=maxwl)
        t += dt
        step += 1

    area = state.cellsize ** 2
    hc = state.C * state.h
    dz = state.z_b - z_b0
    _, cstar = effective_medium(params)
    ledger.stored_water = float((state.h - hc).sum() + (1 - cstar) * dz.sum()) * area
    ledger.stored_sediment = float(hc.sum() + cstar * dz.sum()) * area
    ledger.steps = step
    ledger.sim_time = t

    header = dict(cellsize=dem.cellsize, origin_x=dem.origin_x,
                  origin_y=dem.origin_y, nodata=dem.nodata)
    return SimOutputs(
        max_water_level=Raster(values=maxwl, **header),
        deformation=Raster(values=dz, **header),
        ledger=ledger,
    )
