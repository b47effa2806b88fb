"""
Monte Carlo experiments.

This module provides:
1. Random instances: gen_channel (i.i.d. CN(0, 1)), gen_noise (CN(0, sigma^2))
2. run_ber_sweep: bit-error rate versus transmit SNR for a list of precoders
3. run_node_count: mean visited BB nodes for P-BB and F-BB over a K sweep
4. run_convergence: per-iteration UB0 (PSK) or MSE (QAM) traces
5. run_prop1_audit: boundary-count and rank audit of relaxed solutions
6. export_csv / load_csv

Randomness: frame f of SNR point i draws from
Generator(SFC64(SeedSequence(seed, spawn_key=(i, f)))), so results do not
depend on worker count or scheduling. All precoders in a sweep see the same
channel, bits and noise for a given frame.
"""

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Dict, List, Mapping, NamedTuple, Optional, Sequence, Tuple, Type

import numpy as np
import pandas as pd
from numpy.random import SFC64, Generator, SeedSequence
from pydantic import BaseModel

from onebit.config import get_settings
from onebit.models import (
    AuditRecord,
    BERRecord,
    ConvergenceRecord,
    ModulationKind,
    NodeCountRecord,
    RunKind,
    SimConfig,
)
from onebit.services.bb_engine import fbb, pbb_psk
from onebit.services.ci_geometry import audit_boundary, audit_rank, build_M, kkt_residuals
from onebit.services.constellations import (
    Constellation,
    bits_of,
    count_bit_errors,
    demodulate_many,
    modulate,
    parse_modulation,
)
from onebit.services.precoders import (
    PRECODERS,
    QUANTIZED,
    Precoder,
    alt_opt_pbb_qam,
    get_precoder,
    relax_ci_problem,
)
from onebit.services.real_expansion import expand_channel
from onebit.services.solvers import SimplexSolver

logger = logging.getLogger(__name__)

ENERGY_TOL = 1e-9


class ExportError(OSError):
    """Raised when a result file cannot be written."""
    pass


@dataclass(frozen=True, eq=False)
class ChannelInstance:
    H: np.ndarray

    @property
    def H_E(self) -> np.ndarray:
        return expand_channel(self.H)

    @property
    def k(self) -> int:
        return self.H.shape[0]

    @property
    def nt(self) -> int:
        return self.H.shape[1]


def frame_rng(seed: int, *key: int) -> Generator:
    return Generator(SFC64(SeedSequence(seed, spawn_key=tuple(int(k) for k in key))))


def gen_channel(k: int, nt: int, rng: Generator) -> ChannelInstance:
    if k < 1 or nt < 1:
        raise ValueError(f"channel needs K, Nt >= 1, got K={k}, Nt={nt}")
    H = (rng.standard_normal((k, nt)) + 1j * rng.standard_normal((k, nt))) / math.sqrt(2.0)
    return ChannelInstance(H=H)


def gen_noise(k: int, sigma2: float, rng: Generator) -> np.ndarray:
    if sigma2 < 0:
        raise ValueError(f"noise variance must be non-negative, got {sigma2}")
    std = math.sqrt(sigma2 / 2.0)
    return std * rng.standard_normal(k) + 1j * std * rng.standard_normal(k)


def snr_to_sigma2(snr_db: float) -> float:
    return 10.0 ** (-snr_db / 10.0)


def duplicate_users(H: np.ndarray, bits: np.ndarray, count: int, bits_per_symbol: int) -> Tuple[np.ndarray, np.ndarray]:
    """Make users 2..1+count exact copies of user 1 (channel row and bits)."""
    if count == 0:
        return H, bits
    H = H.copy()
    bits = bits.reshape(H.shape[0], bits_per_symbol).copy()
    H[1:count + 1] = H[0]
    bits[1:count + 1] = bits[0]
    return H, bits.reshape(-1)


def draw_instance(cfg: SimConfig, constellation: Constellation, k: int, rng: Generator):
    """Channel, bits, symbols for one frame (with the configured user duplication)."""
    channel = gen_channel(k, cfg.nt, rng)
    bits = rng.integers(0, 2, size=k * constellation.bits_per_symbol)
    H, bits = duplicate_users(channel.H, bits, cfg.duplicate_users, constellation.bits_per_symbol)
    symbols, _ = modulate(bits, constellation)
    return H, bits, symbols


# =============================================================================
# BER sweep
# =============================================================================

class FrameOutcome(NamedTuple):
    ok: bool
    errors: int = 0
    bits: int = 0
    nodes: int = 0
    iterations: int = 0
    wall_ms: float = 0.0


def _simulate_frame(
    cfg: SimConfig,
    snr_idx: int,
    frame: int,
    precoders: Optional[Mapping[str, Precoder]] = None,
) -> Dict[str, FrameOutcome]:
    constellation = parse_modulation(cfg.modulation)
    sigma2 = snr_to_sigma2(cfg.snr_db[snr_idx])
    rng = frame_rng(cfg.seed, snr_idx, frame)
    H, bits, symbols = draw_instance(cfg, constellation, cfg.k, rng)
    noise = gen_noise(cfg.k, sigma2, rng)

    outcomes = {}
    for name in cfg.precoders:
        precode = precoders[name] if precoders is not None else get_precoder(name)
        start = time.perf_counter()
        try:
            result = precode(H, symbols, constellation, sigma2, cfg.epsilon0)
            x = np.asarray(result.x)
            if name in QUANTIZED and abs(float(np.vdot(x, x).real) - 1.0) > ENERGY_TOL:
                raise ValueError(f"transmit energy {np.vdot(x, x).real:.12f} != 1")
        except Exception:
            logger.exception("precoder %s failed on frame %d at %.1f dB", name, frame, cfg.snr_db[snr_idx])
            outcomes[name] = FrameOutcome(ok=False)
            continue
        wall_ms = (time.perf_counter() - start) * 1e3

        y = H @ x + noise
        decided = demodulate_many(y, constellation, result.beta if result.beta > 0 else 1.0)
        outcomes[name] = FrameOutcome(
            ok=True,
            errors=count_bit_errors(bits, bits_of(decided, constellation)),
            bits=bits.size,
            nodes=result.diagnostics.nodes_visited,
            iterations=result.iterations,
            wall_ms=wall_ms,
        )
    return outcomes


def _frame_task(args) -> Dict[str, FrameOutcome]:
    cfg, snr_idx, frame = args
    return _simulate_frame(cfg, snr_idx, frame)


def _usable_precoders(cfg: SimConfig, registry: Mapping[str, Precoder]) -> List[str]:
    names = []
    for name in cfg.precoders:
        if name not in registry:
            get_precoder(name)  # raises UnknownPrecoderError
        if name == "fbb" and 2 * cfg.nt > get_settings().fbb_max_dimension:
            logger.warning("skipping fbb: 2Nt = %d exceeds the F-BB guard", 2 * cfg.nt)
            continue
        names.append(name)
    return names


def run_ber_sweep(cfg: SimConfig, precoders: Optional[Mapping[str, Precoder]] = None) -> List[BERRecord]:
    """
    Bit-error rate per (SNR point, precoder).

    A precoder that raises on a frame is logged and skipped for that frame
    only; if it fails on every frame of an SNR point, that point gets no
    record (logged at ERROR) rather than a zero-bit one. Injected precoders (a name -> callable mapping) run in-process.
    """
    registry = precoders if precoders is not None else PRECODERS
    cfg = cfg.model_copy(update={"precoders": _usable_precoders(cfg, registry)})
    workers = cfg.workers if precoders is None else 1

    records: List[BERRecord] = []
    pool = ProcessPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for snr_idx, snr in enumerate(cfg.snr_db):
            tasks = [(cfg, snr_idx, frame) for frame in range(cfg.trials)]
            if pool is not None:
                outcomes = list(pool.map(_frame_task, tasks, chunksize=max(1, cfg.trials // (4 * workers))))
            else:
                outcomes = [_simulate_frame(cfg, snr_idx, frame, precoders) for _, snr_idx, frame in tasks]

            for name in cfg.precoders:
                done = [o[name] for o in outcomes if o[name].ok]
                failed = len(outcomes) - len(done)
                if not done:
                    logger.error("%s: all %d frames failed at %.1f dB; no record written", name, failed, snr)
                    continue
                if failed:
                    logger.warning("%s: %d of %d frames failed at %.1f dB", name, failed, len(outcomes), snr)
                bits = sum(o.bits for o in done)
                errors = sum(o.errors for o in done)
                ber = errors / bits
                frames = len(done)
                records.append(
                    BERRecord(
                        precoder=name,
                        snr_db=snr,
                        bits=bits,
                        errors=errors,
                        ber=ber,
                        ber_stderr=math.sqrt(ber * (1.0 - ber) / bits),
                        mean_nodes=sum(o.nodes for o in done) / frames,
                        mean_iters=sum(o.iterations for o in done) / frames,
                        wall_ms=sum(o.wall_ms for o in done) / frames if cfg.record_timing else 0.0,
                    )
                )
            logger.info("SNR %.1f dB done (%d frames)", snr, cfg.trials)
    finally:
        if pool is not None:
            pool.shutdown()
    return records


# =============================================================================
# Node count, convergence and audit experiments
# =============================================================================

def _sigma2_of(cfg: SimConfig) -> float:
    return snr_to_sigma2(cfg.snr_db[0])


def _search_methods(cfg: SimConfig) -> List[str]:
    if 2 * cfg.nt > get_settings().fbb_max_dimension:
        logger.warning("2Nt = %d exceeds the F-BB guard; F-BB column skipped", 2 * cfg.nt)
        return ["pbb"]
    return ["pbb", "fbb"]


def _search(method: str, H, symbols, constellation: Constellation, cfg: SimConfig, solver: SimplexSolver):
    """(nodes, depth, trace) of one P-BB / F-BB run."""
    if constellation.kind is ModulationKind.QAM:
        result = alt_opt_pbb_qam(
            H, symbols, constellation, _sigma2_of(cfg), cfg.epsilon0, inner=method, solver=solver,
        )
        return result.diagnostics.nodes_visited, result.iterations, result.mse_trace

    P = build_M(H, symbols, constellation)
    if method == "pbb":
        lp = relax_ci_problem(P, solver)
        result = pbb_psk(P, lp.x, solver=solver)
    else:
        result = fbb(P, ModulationKind.PSK, solver=solver)
    diag = result.diagnostics
    return diag.nodes_visited, diag.depth_iterations, diag.ub_trace


def run_node_count(cfg: SimConfig) -> List[NodeCountRecord]:
    constellation = parse_modulation(cfg.modulation)
    methods = _search_methods(cfg)
    solver = SimplexSolver()
    records = []
    for k in cfg.user_counts:
        stats: Dict[str, List[Tuple[int, int]]] = {m: [] for m in methods}
        for trial in range(cfg.trials):
            rng = frame_rng(cfg.seed, k, trial)
            H, _, symbols = draw_instance(cfg, constellation, k, rng)
            for method in methods:
                nodes, depth, _ = _search(method, H, symbols, constellation, cfg, solver)
                stats[method].append((nodes, depth))
        for method in methods:
            nodes = np.array([n for n, _ in stats[method]], dtype=np.float64)
            depths = np.array([d for _, d in stats[method]], dtype=np.float64)
            records.append(
                NodeCountRecord(
                    nt=cfg.nt,
                    k=k,
                    modulation=constellation.name,
                    method=method,
                    trials=cfg.trials,
                    mean_nodes=float(nodes.mean()),
                    mean_depth=float(depths.mean()),
                    max_depth=int(depths.max()),
                )
            )
        logger.info("node count K=%d done", k)
    return records


def run_convergence(cfg: SimConfig) -> List[ConvergenceRecord]:
    """UB0 (PSK, minimisation sense) or MSE (QAM) after every iteration."""
    constellation = parse_modulation(cfg.modulation)
    methods = _search_methods(cfg)
    solver = SimplexSolver()
    records = []
    for trial in range(cfg.trials):
        rng = frame_rng(cfg.seed, cfg.k, trial)
        H, _, symbols = draw_instance(cfg, constellation, cfg.k, rng)
        for method in methods:
            _, _, trace = _search(method, H, symbols, constellation, cfg, solver)
            records.extend(
                ConvergenceRecord(method=method, trial=trial, iteration=i, value=v)
                for i, v in enumerate(trace)
            )
    return records


def run_prop1_audit(cfg: SimConfig) -> List[AuditRecord]:
    """
    Count relaxed-solution entries strictly inside the box and compare with
    2 rank(H) - 1; every solve is also certified through its KKT residuals.
    """
    constellation = parse_modulation(cfg.modulation)
    solver = SimplexSolver()
    records = []
    for k in cfg.user_counts:
        passed = 0
        for trial in range(cfg.trials):
            rng = frame_rng(cfg.seed, k, trial)
            H, _, symbols = draw_instance(cfg, constellation, k, rng)
            P = build_M(H, symbols, constellation)
            lp = relax_ci_problem(P, solver)
            audit = audit_boundary(lp.x, P.dac)
            rank_h = audit_rank(H)
            bound = 2 * rank_h - 1
            report = kkt_residuals(lp.x, lp.t, lp.beta, lp.mu, lp.nu, P.M, P.dac.scale, eq_rows=P.eq_rows)
            ok = audit.count <= bound
            passed += ok
            if not ok:
                logger.warning("boundary count %d exceeds %d (K=%d, trial %d)", audit.count, bound, k, trial)
            records.append(
                AuditRecord(
                    nt=cfg.nt,
                    k=k,
                    modulation=constellation.name,
                    trial=trial,
                    rank_h=rank_h,
                    rank_m=audit_rank(P.M),
                    count=audit.count,
                    bound=bound,
                    passed=ok,
                    kkt_max=report.max_residual,
                )
            )
        logger.info("boundary audit K=%d: %d/%d passed", k, passed, cfg.trials)
    return records


EXPERIMENTS: Dict[RunKind, Callable[[SimConfig], List[BaseModel]]] = {
    RunKind.BER_SWEEP: run_ber_sweep,
    RunKind.NODE_COUNT: run_node_count,
    RunKind.CONVERGENCE: run_convergence,
    RunKind.PROP1_AUDIT: run_prop1_audit,
}

RECORD_TYPES: Dict[RunKind, Type[BaseModel]] = {
    RunKind.BER_SWEEP: BERRecord,
    RunKind.NODE_COUNT: NodeCountRecord,
    RunKind.CONVERGENCE: ConvergenceRecord,
    RunKind.PROP1_AUDIT: AuditRecord,
}


def run_experiment(kind: RunKind, cfg: SimConfig) -> List[BaseModel]:
    return EXPERIMENTS[RunKind(kind)](cfg)


# =============================================================================
# Export
# =============================================================================

def export_csv(records: Sequence[BaseModel], path, record_type: Type[BaseModel] = BERRecord) -> None:
    """
    Write records as CSV: header, then one row per record in the given order.

    Floats are written with their shortest round-trip representation and a
    '.' decimal point. An empty list writes the header of record_type.
    """
    columns = list(type(records[0]).model_fields) if records else list(record_type.model_fields)
    frame = pd.DataFrame([r.model_dump() for r in records], columns=columns)
    try:
        frame.to_csv(path, index=False)
    except OSError as e:
        raise ExportError(f"cannot write {path}: {e}") from e


def load_csv(path, record_type: Type[BaseModel] = BERRecord) -> List[BaseModel]:
    frame = pd.read_csv(path, float_precision="round_trip").astype(object)
    return [record_type(**row) for row in frame.to_dict(orient="records")]
