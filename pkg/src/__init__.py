"""Kinetic Fokker-Planck toolkit - spectral solver, optimal control and particle cross-checks.
动理学 Fokker-Planck 工具包 - 谱方法求解、最优控制与粒子交叉验证。
"""

__version__ = "0.1.0"
