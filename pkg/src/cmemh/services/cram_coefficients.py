"""Partial-fraction coefficients of the Chebyshev rational approximation of exp.

For degree k the approximation on the negative real axis is

    exp(x) ~ alpha_0 + 2 Re sum_j alpha_j / (x - theta_j)

over the k/2 poles theta_j in the upper half plane. Values are the published
best-approximation tables for k = 14 and k = 16.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
import numpy.typing as npt


class CramCoefficients(NamedTuple):
    """Limit value, residues and poles of one CRAM degree."""

    alpha0: float
    alpha: npt.NDArray[np.complex128]
    theta: npt.NDArray[np.complex128]


CRAM_14 = CramCoefficients(
    alpha0=1.8321743782540412751e-14,
    alpha=np.array(
        [
            -7.1542880635890672853e-05 + 1.4361043349541300111e-04j,
            9.4390253107361688779e-03 - 1.7184791958483017511e-02j,
            -3.7636003878226968717e-01 + 3.3518347029450104214e-01j,
            -2.3498232091082701191e01 - 5.8083591297142074004e00j,
            4.6933274488831293047e01 + 4.5643649768827760791e01j,
            -2.7875161940145646468e01 - 1.0214733999056451434e02j,
            4.8071120988325088907e00 - 1.3209793837428723881e00j,
        ],
        dtype=np.complex128,
    ),
    theta=np.array(
        [
            -8.8977731864688888199e00 + 1.6630982619902085304e01j,
            -3.7032750494234480603e00 + 1.3656371871483268171e01j,
            -2.0875863825013012510e-01 + 1.0991260561901260913e01j,
            3.9933697105785685194e00 + 6.0048316422350373178e00j,
            5.0893450605806245066e00 + 3.5888240290270065102e00j,
            5.6231425727459771248e00 + 1.1940690463439669766e00j,
            2.2697838292311127097e00 + 8.4617379730402214019e00j,
        ],
        dtype=np.complex128,
    ),
)

CRAM_16 = CramCoefficients(
    alpha0=2.1248537104952237488e-16,
    alpha=np.array(
        [
            -5.0901521865224915650e-07 - 2.4220017652852287970e-05j,
            2.1151742182466030907e-04 + 4.3892969647380673918e-03j,
            1.1339775178483930527e02 + 1.0194721704215856450e02j,
            1.5059585270023467528e01 - 5.7514052776421819979e00j,
            -6.4500878025539646595e01 - 2.2459440762652096056e02j,
            -1.4793007113557999718e00 + 1.7686588323782937906e00j,
            -6.2518392463207918892e01 - 1.1190391094283228480e01j,
            4.1023136835410021273e-02 - 1.5743466173455468191e-01j,
        ],
        dtype=np.complex128,
    ),
    theta=np.array(
        [
            -1.0843917078696988026e01 + 1.9277446167181652284e01j,
            -5.2649713434426468895e00 + 1.6220221473167927305e01j,
            5.9481522689511774808e00 + 3.5874573620183222829e00j,
            3.5091036084149180974e00 + 8.4361989858843750826e00j,
            6.4161776990994341923e00 + 1.1941223933701386874e00j,
            1.4193758971856659786e00 + 1.0925363484496722585e01j,
            4.9931747377179963991e00 + 5.9968817136039422260e00j,
            -1.4139284624888862114e00 + 1.3497725698892745389e01j,
        ],
        dtype=np.complex128,
    ),
)

CRAM_TABLES: dict[int, CramCoefficients] = {14: CRAM_14, 16: CRAM_16}
