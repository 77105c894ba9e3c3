"""Design-equation calculator for the analog headstage.

Only closed-form targets are computed here (amplifier gain and bandwidth,
Tow-Thomas band-pass centre frequency, gain and bandwidth); there is no
transient circuit model.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

LNA_INPUT_CAPACITORS_F = (2e-12, 8e-12, 14e-12, 20e-12)


@dataclass(frozen=True)
class LnaParams:
    c_in: float
    c_f: float = 200e-15
    gm: float = 20e-9
    c_load: float = 20e-15

    def __post_init__(self):
        for name in ("c_in", "c_f", "gm", "c_load"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")
        if self.c_in < self.c_f:
            raise ValueError("c_in must be >= c_f")


@dataclass(frozen=True)
class TowThomasParams:
    r1: float
    r2: float
    r3: float
    r4: float
    c1: float
    r5: float = 1e6
    r6: float = 1e6

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not value > 0:
                raise ValueError(f"{name} must be strictly positive")


def lna_gain_db(p: LnaParams) -> float:
    return 20.0 * math.log10(p.c_in / p.c_f)


def lna_bandwidth_hz(p: LnaParams, gain_linear: float) -> float:
    """Gm / (A_M * C_L), applied as written (no 2*pi factor).

    Note the quoted design point (20 nS, 20 fF, 40 dB) gives 10 kHz by this
    formula, while the measured figure reported for the chip is ~11.1 kHz.
    """
    if not gain_linear > 0:
        raise ValueError("gain_linear must be > 0")
    return p.gm / (gain_linear * p.c_load)


def towthomas_response(p: TowThomasParams) -> dict[str, float]:
    f0 = 1.0 / (2.0 * math.pi * math.sqrt(p.r3 * p.r4 * p.c1 ** 2))
    return {
        "f0_hz": f0,
        "gain_linear": p.r4 / p.r1,
        "bw_hz": 2.0 * math.pi * f0 * math.sqrt(p.r3 * p.r4) / p.r2,
    }


def towthomas_simplified(r: float, r1: float, r2: float, c1: float) -> dict[str, float]:
    """Closed forms for the matched case r3 = r4 = r."""
    return {
        "f0_hz": 1.0 / (2.0 * math.pi * r * c1),
        "gain_linear": r / r1,
        "bw_hz": 1.0 / (r2 * c1),
    }


def design_table(tt: TowThomasParams | None = None, lna: LnaParams | None = None) -> list[dict[str, float | str]]:
    rows: list[dict[str, float | str]] = []
    if tt is not None:
        rows.append({"block": "tow_thomas", **towthomas_response(tt)})
    if lna is not None:
        gain_db = lna_gain_db(lna)
        rows.append({
            "block": "lna",
            "gain_db": gain_db,
            "bw_hz": lna_bandwidth_hz(lna, 10.0 ** (gain_db / 20.0)),
        })
    return rows
