"""Link-level simulator and design toolkit for superheterodyne Rydberg atomic receivers.

Subpackage map:

- ``raqr.atomic``: four-level ladder master equation, steady states, susceptibility.
- ``raqr.frontend``: RF -> optical -> voltage -> complex-baseband chain, noise budget.
- ``raqr.waveform``: time-domain simulation, down-conversion, I/Q demodulation.
- ``raqr.optimize``: normalized-noise functional and operating-point optimization.
- ``raqr.mimo``: multi-sensor uplink model, detectors, rate bounds, Monte Carlo.
- ``raqr.config`` / ``raqr.recipes`` / ``raqr.cli``: experiment harness.
"""

__version__ = "0.1.0"
