"""Regenerate the bundled demo controller weights.

The demo controllers are tanh networks that linearize to LQR gains at
the origin (see roacert.models.tanh_lqr_controller); this script exists
so the checked-in weight files can be reproduced or replaced.  Run from
the repository root:

    python3 scripts/generate_demo_weights.py
"""

from pathlib import Path

import numpy as np

from roacert.models import (PendulumParams, VehicleParams, pendulum_plant,
                            tanh_lqr_controller, vehicle_plant)
from roacert.nn import Activation, NeuralNetwork, save_weights

OUT = Path(__file__).resolve().parent.parent / "configs"


def main() -> None:
    OUT.mkdir(exist_ok=True)

    pend = pendulum_plant(PendulumParams())
    nn = tanh_lqr_controller(pend.A, pend.B1[:, 1:2], scales=(2.0,))
    save_weights(nn, OUT / "pendulum_weights.json")

    veh = vehicle_plant(VehicleParams())
    nn = tanh_lqr_controller(veh.A, veh.B1[:, :1], scales=(1.0,))
    save_weights(nn, OUT / "vehicle_weights.json")

    dt = 0.1
    A = np.array([[1.0, dt], [0.0, 1.0]])
    B = np.array([[0.0], [dt]])
    nn = tanh_lqr_controller(A, B, scales=(1.5,))
    save_weights(nn, OUT / "double_integrator_weights.json")

    # Zero controller (u = 0) for the negative demo on an unstable plant.
    zero = NeuralNetwork(
        layers=((np.array([[1.0, 0.0]]), np.zeros(1)),),
        output=(np.zeros((1, 1)), np.zeros(1)),
        activations=(Activation("tanh"),),
    )
    save_weights(zero, OUT / "zero_weights.json")
    print(f"wrote demo weights to {OUT}")


if __name__ == "__main__":
    main()
