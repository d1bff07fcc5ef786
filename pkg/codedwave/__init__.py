"""
Coded diverging-wave ultrasound imaging: Golay-coded excitation, point
scatterer simulation, correlation receiver, beamforming and image metrics.
"""

__version__ = "0.1.0"
