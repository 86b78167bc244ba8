"""Simulation toolkit for recognition-driven content dissemination in
opportunistic device-to-device networks.

Three engines share one scenario description:

* ``des``      -- per-node discrete-event simulation replaying contact traces,
* ``analytic`` -- mean-field Markov model of a single community,
* ``hybrid``   -- event loop over traveller movements with communities treated
                  as steady-state black boxes.

The ``service`` module exposes all of them over HTTP; the ``cli`` module is a
thin client of the same service layer.
"""

__version__ = "0.1.0"
