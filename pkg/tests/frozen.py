"""Reference values produced by ``tests/oracles.py`` (independent of the package)."""

CHORD_GAUSSIAN_P0 = 0.5317348639676974
CHORD_GAUSSIAN_P03 = 0.19561345094000704
HYPERBOLIC_RADIUS_T1 = 0.9242343145200195
TAU_C1_S03_TH04 = 1.774819053478399
TAU_BUMP005_S1_THM02 = 1.9931191546558826
KERNEL_BUMP005_PAIR = 0.030982483341022767
KERNEL_BUMP005_SHIFTED_PAIR = 0.0136379194330166
