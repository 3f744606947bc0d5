"""Reading, writing and calibrating Institut Fresnel style measurements.

File layout (ASCII): ``#`` comment lines, optionally carrying ``key=value``
geometry hints, then one row per measured (transmitter, receiver,
frequency) triple::

    tx  rx  freq  Re(E_tot)  Im(E_tot)  Re(E_inc)  Im(E_inc)

Indices are 1-based positions on their rings: transmitter ``p`` sits at
angle ``360 (p - 1) / n_tx_positions`` degrees, receiver ``q`` at
``360 (q - 1) / n_rx_positions``. Receivers that were not measured for a
transmitter (the blanked arc around it) simply have no row. Frequencies are
in GHz unless the header says ``frequency_unit=Hz``.

Recognised header keys and their defaults (single-cylinder TM family)::

    tx_radius=0.72  rx_radius=0.76  n_tx_positions=36  n_rx_positions=72
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .forward import incident_field, mie_cylinder
from .geometry import FieldMatrix, ImagingConfig

log = logging.getLogger(__name__)

HEADER_DEFAULTS = {"tx_radius": 0.72, "rx_radius": 0.76, "n_tx_positions": 36,
                   "n_rx_positions": 72, "frequency_unit": "GHz"}


@dataclass(frozen=True, eq=False)
class FresnelRecord:
    """Measured fields on a (frequency, transmitter, receiver-position) grid.

    ``total`` and ``incident`` are complex arrays with NaN where a pair was
    not measured.
    """
    frequencies: np.ndarray   # Hz
    total: np.ndarray
    incident: np.ndarray
    tx_radius: float
    rx_radius: float

    @property
    def n_tx(self) -> int:
        return self.total.shape[1]

    @property
    def n_rx_positions(self) -> int:
        return self.total.shape[2]

    @property
    def present(self) -> np.ndarray:
        return ~np.isnan(self.total)

    @property
    def n_rx(self) -> int:
        """Receivers measured per transmitter (constant across the record)."""
        return int(self.present[0, 0].sum())

    @property
    def scattered(self) -> np.ndarray:
        return self.total - self.incident

    def imaging_config(self, freq_index: int = 0, doi_side: float = 0.15, grid_m: int = 32,
                       source_amplitude: float | None = None) -> ImagingConfig:
        """Imaging geometry matching this record at one frequency."""
        from .geometry import make_config
        kw = {} if source_amplitude is None else {"source_amplitude": source_amplitude}
        return make_config(float(self.frequencies[freq_index]), doi_side, grid_m, self.n_tx,
                           self.n_rx_positions, self.tx_radius, self.rx_radius, **kw)


def _parse_header(line, header):
    for token in line.lstrip("#").split():
        if "=" in token:
            key, val = token.split("=", 1)
            if key in HEADER_DEFAULTS:
                header[key] = val if key == "frequency_unit" else float(val)


def parse_fresnel(path) -> FresnelRecord:
    header = dict(HEADER_DEFAULTS)
    rows = []
    with open(path) as fh:
        lines = fh.read().split("\n")
    # a file that ends without a newline may have been cut mid-row
    truncated_tail = bool(lines) and lines[-1].strip() != ""
    for lineno, line in enumerate(lines, 1):
        s = line.strip()
        if not s:
            continue
        if s.startswith("#"):
            _parse_header(s, header)
            continue
        parts = s.split()
        try:
            if len(parts) != 7:
                raise ValueError(f"expected 7 columns, found {len(parts)}")
            tx, rx = int(parts[0]), int(parts[1])
            vals = [float(p) for p in parts[2:]]
        except ValueError as exc:
            hint = " (file appears truncated)" if truncated_tail and lineno == len(lines) else ""
            raise DataError(f"{path}: line {lineno}: {exc}{hint}") from None
        rows.append((lineno, tx, rx, *vals))
    if not rows:
        raise DataError(f"{path}: no data rows")

    n_tx, n_rx = int(header["n_tx_positions"]), int(header["n_rx_positions"])
    scale = 1e9 if str(header["frequency_unit"]).lower() == "ghz" else 1.0
    freqs = sorted({r[3] for r in rows})
    f_index = {f: k for k, f in enumerate(freqs)}
    total = np.full((len(freqs), n_tx, n_rx), np.nan + 0j)
    inc = np.full_like(total, np.nan)
    for lineno, tx, rx, f, tr, ti, ir, ii in rows:
        if not (1 <= tx <= n_tx and 1 <= rx <= n_rx):
            raise DataError(f"{path}: line {lineno}: index ({tx}, {rx}) outside {n_tx} x {n_rx} positions")
        k = f_index[f]
        if not np.isnan(total[k, tx - 1, rx - 1]):
            raise DataError(f"{path}: line {lineno}: duplicate entry for tx {tx}, rx {rx}")
        total[k, tx - 1, rx - 1] = tr + 1j * ti
        inc[k, tx - 1, rx - 1] = ir + 1j * ii

    counts = (~np.isnan(total)).sum(axis=2)
    if np.any(counts != counts.flat[0]):
        raise DataError(f"{path}: inconsistent receiver counts per transmitter/frequency "
                        f"(min {counts.min()}, max {counts.max()})")
    return FresnelRecord(np.array(freqs) * scale, total, inc, header["tx_radius"], header["rx_radius"])


def write_fresnel(path, record: FresnelRecord, comment: str = ""):
    """Write a record in the layout :func:`parse_fresnel` reads (GHz frequencies)."""
    with open(path, "w") as fh:
        if comment:
            for line in comment.splitlines():
                fh.write(f"# {line}\n")
        fh.write(f"# tx_radius={float(record.tx_radius)!r} rx_radius={float(record.rx_radius)!r} "
                 f"n_tx_positions={record.n_tx} n_rx_positions={record.n_rx_positions} "
                 f"frequency_unit=GHz\n")
        fh.write("# tx rx freq re_tot im_tot re_inc im_inc\n")
        for k, f in enumerate(record.frequencies):
            for p in range(record.n_tx):
                for q in np.flatnonzero(record.present[k, p]):
                    t, i = record.total[k, p, q], record.incident[k, p, q]
                    fh.write(f"{p + 1} {q + 1} {float(f) / 1e9!r} {float(t.real)!r} {float(t.imag)!r} "
                             f"{float(i.real)!r} {float(i.imag)!r}\n")


def _check_geometry(record: FresnelRecord, config: ImagingConfig, freq_index: int):
    problems = []
    if config.n_tx != record.n_tx:
        problems.append(f"n_tx {config.n_tx} != {record.n_tx}")
    if config.n_rx != record.n_rx_positions:
        problems.append(f"n_rx {config.n_rx} != {record.n_rx_positions} receiver positions")
    for name in ("tx_radius", "rx_radius"):
        if not math.isclose(getattr(config, name), getattr(record, name), rel_tol=1e-9):
            problems.append(f"{name} {getattr(config, name)} != {getattr(record, name)}")
    if not math.isclose(config.frequency, record.frequencies[freq_index], rel_tol=1e-9):
        problems.append(f"frequency {config.frequency} != {record.frequencies[freq_index]}")
    if problems:
        raise DataError("config does not match the record: " + "; ".join(problems))


def calibration_factors(record: FresnelRecord, config: ImagingConfig, freq_index: int = 0) -> np.ndarray:
    """Per-transmitter c_p = simulated / measured incident field at a reference receiver.

    The reference is the receiver nearest the forward direction (opposite the
    source); if that one was not measured, the strongest measured incident
    receiver is used instead.
    """
    _check_geometry(record, config, freq_index)
    sim = incident_field(config, config.rx_positions()).values
    meas = record.incident[freq_index]
    present = record.present[freq_index]
    n_rx = record.n_rx_positions
    c = np.empty(record.n_tx, dtype=complex)
    for p in range(record.n_tx):
        forward = (p / record.n_tx + 0.5) % 1.0
        q = int(round(forward * n_rx)) % n_rx
        if not present[p, q]:
            q = int(np.nanargmax(np.where(present[p], np.abs(meas[p]), np.nan)))
            log.info("transmitter %d: forward receiver absent, using receiver %d", p + 1, q + 1)
        c[p] = sim[p, q] / meas[p, q]
    return c


def calibrate(record: FresnelRecord, config: ImagingConfig, freq_index: int = 0) -> FieldMatrix:
    """Calibrated scattered field, masked where the record has no measurement."""
    c = calibration_factors(record, config, freq_index)
    present = record.present[freq_index]
    values = np.where(present, record.scattered[freq_index] * c[:, None], 0)
    return FieldMatrix(values, "scattered", present)


def apply_calibration(record: FresnelRecord, factors, freq_index: int = 0) -> FresnelRecord:
    """Copy of ``record`` with one frequency's fields scaled by per-transmitter factors."""
    total, inc = record.total.copy(), record.incident.copy()
    total[freq_index] *= np.asarray(factors)[:, None]
    inc[freq_index] *= np.asarray(factors)[:, None]
    return FresnelRecord(record.frequencies, total, inc, record.tx_radius, record.rx_radius)


def blanked_mask(n_tx: int, n_rx_positions: int, first_deg: float = 60.0, last_deg: float = 300.0):
    """Receivers measured per transmitter: angles within [first, last] degrees of the source."""
    mask = np.zeros((n_tx, n_rx_positions), bool)
    tx_ang = 360.0 * np.arange(n_tx) / n_tx
    rx_ang = 360.0 * np.arange(n_rx_positions) / n_rx_positions
    rel = (rx_ang[None, :] - tx_ang[:, None]) % 360.0
    mask[(rel >= first_deg - 1e-9) & (rel <= last_deg + 1e-9)] = True
    return mask


def synthesize_cylinder_record(frequencies, radius=0.015, eps_r=3.0, center=(0.0, -0.03),
                               tx_radius=0.72, rx_radius=0.76, n_tx=36, n_rx_positions=72,
                               snr_db: float | None = 30.0, seed: int = 0,
                               gauge: bool = True) -> FresnelRecord:
    """Single-cylinder record from the analytic series, in measurement-like form.

    Each transmitter gets an arbitrary complex source gauge (unknown antenna
    gain and phase) when ``gauge`` is set, and complex Gaussian noise at
    ``snr_db`` relative to the scattered field is added to the total field.
    """
    from .geometry import make_config
    rng = np.random.default_rng(seed)
    mask = blanked_mask(n_tx, n_rx_positions)
    F = len(frequencies)
    total = np.full((F, n_tx, n_rx_positions), np.nan + 0j)
    inc = np.full_like(total, np.nan)
    for k, f in enumerate(frequencies):
        cfg = make_config(f, 0.15, 8, n_tx, n_rx_positions, tx_radius, rx_radius, source_amplitude=1.0)
        e_inc = incident_field(cfg, cfg.rx_positions()).values
        e_sca = mie_cylinder(cfg, radius, eps_r, center).values
        if snr_db is not None:
            p_sig = np.mean(np.abs(e_sca[mask]) ** 2)
            sigma = math.sqrt(p_sig / 10 ** (snr_db / 10) / 2)
            e_sca = e_sca + sigma * (rng.normal(size=e_sca.shape) + 1j * rng.normal(size=e_sca.shape))
        g = (1e3 * rng.uniform(0.5, 2.0, n_tx) * np.exp(1j * rng.uniform(-np.pi, np.pi, n_tx))
             if gauge else np.ones(n_tx))[:, None]
        total[k][mask] = (g * (e_inc + e_sca))[mask]
        inc[k][mask] = (g * e_inc)[mask]
    return FresnelRecord(np.asarray(frequencies, float), total, inc, tx_radius, rx_radius)
