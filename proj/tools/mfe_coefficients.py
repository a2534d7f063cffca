"""Writes data/mfe_coefficients.csv: the nine-mode shear-flow model evaluated from
its ODEs written out mode by mode, as a cross-check for the C++ term table.

Rows: kind,out,i,j,value with modes numbered 1..9.
  forcing   out  -  -  constant term multiplying 1/Re
  damping   out  -  -  linear coefficient d in -d*q_out/Re
  quadratic out  i  j  coefficient of q_i*q_j (i <= j) in dq_out/dt
"""

import math
import sys

LX = 4.0 * math.pi
LZ = 2.0 * math.pi
A = 2.0 * math.pi / LX
B = math.pi / 2.0
G = 2.0 * math.pi / LZ
KAG = math.sqrt(A * A + G * G)
KBG = math.sqrt(B * B + G * G)
KABG = math.sqrt(A * A + B * B + G * G)
S6 = math.sqrt(6.0)
S32 = math.sqrt(1.5)


def nonlinear(a):
    a1, a2, a3, a4, a5, a6, a7, a8, a9 = a
    return [
        -S32 * B * G / KABG * a6 * a8 + S32 * B * G / KBG * a2 * a3,
        5.0 * math.sqrt(2.0) * G * G / (3.0 * math.sqrt(3.0) * KAG) * a4 * a6
        - G * G / (S6 * KAG) * a5 * a7
        - A * B * G / (S6 * KAG * KABG) * a5 * a8
        - S32 * B * G / KBG * (a1 * a3 + a3 * a9),
        2.0 * A * B * G / (S6 * KAG * KBG) * (a4 * a7 + a5 * a6)
        + (B * B * (3.0 * A * A + G * G) - 3.0 * G * G * (A * A + G * G))
        / (S6 * KAG * KBG * KABG) * a4 * a8,
        -A / S6 * a1 * a5
        - 10.0 * A * A / (3.0 * S6 * KAG) * a2 * a6
        - S32 * A * B * G / (KAG * KBG) * a3 * a7
        - S32 * A * A * B * B / (KAG * KBG * KABG) * a3 * a8
        - A / S6 * a5 * a9,
        A / S6 * a1 * a4
        + A * A / (S6 * KAG) * a2 * a7
        - A * B * G / (S6 * KAG * KABG) * a2 * a8
        + A / S6 * a4 * a9
        + 2.0 * A * B * G / (S6 * KAG * KBG) * a3 * a6,
        A / S6 * a1 * a7
        + S32 * B * G / KABG * a1 * a8
        + 10.0 * (A * A - G * G) / (3.0 * S6 * KAG) * a2 * a4
        - 2.0 * math.sqrt(2.0 / 3.0) * A * B * G / (KAG * KBG) * a3 * a5
        + A / S6 * a7 * a9
        + S32 * B * G / KABG * a8 * a9,
        -A / S6 * (a1 * a6 + a6 * a9)
        + (G * G - A * A) / (S6 * KAG) * a2 * a5
        + A * B * G / (S6 * KAG * KBG) * a3 * a4,
        2.0 * A * B * G / (S6 * KAG * KABG) * a2 * a5
        + G * G * (3.0 * A * A - B * B + 3.0 * G * G) / (S6 * KAG * KBG * KABG) * a3 * a4,
        S32 * B * G / KBG * a2 * a3 - S32 * B * G / KABG * a6 * a8,
    ]


DAMPING = [
    B * B,
    4.0 * B * B / 3.0 + G * G,
    B * B + G * G,
    (3.0 * A * A + 4.0 * B * B) / 3.0,
    A * A + B * B,
    (3.0 * A * A + 4.0 * B * B + 3.0 * G * G) / 3.0,
    A * A + B * B + G * G,
    A * A + B * B + G * G,
    9.0 * B * B,
]


def unit(*idx):
    v = [0.0] * 9
    for i in idx:
        v[i] = 1.0
    return v


def main(path):
    rows = ["kind,out,i,j,value", f"forcing,1,,,{B * B!r}"]
    for m, d in enumerate(DAMPING):
        rows.append(f"damping,{m + 1},,,{d!r}")
    for i in range(9):
        for j in range(i, 9):
            if i == j:
                coeff = nonlinear(unit(i))
            else:
                both = nonlinear(unit(i, j))
                ni = nonlinear(unit(i))
                nj = nonlinear(unit(j))
                coeff = [both[m] - ni[m] - nj[m] for m in range(9)]
            for m in range(9):
                if coeff[m] != 0.0:
                    rows.append(f"quadratic,{m + 1},{i + 1},{j + 1},{coeff[m]!r}")
    with open(path, "w") as f:
        f.write("\n".join(rows) + "\n")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "data/mfe_coefficients.csv")
