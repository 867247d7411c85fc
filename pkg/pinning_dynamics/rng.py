# pinning_dynamics/rng.py

import numpy as np


def stream(seed: int, replica: int = 0) -> np.random.Generator:
    """
    Counter-based generator for one replica of one experiment.
    Streams with different replica ids never overlap; events draw from
    the stream in order, so (seed, replica, event index) fixes every draw.
    """
    if seed < 0 or replica < 0:
        raise ValueError(f"seed and replica must be non-negative, got {seed}, {replica}")
    sequence = np.random.SeedSequence(entropy=seed, spawn_key=(replica,))
    return np.random.Generator(np.random.Philox(sequence))


class EventDraws:
    """
    Buffered draws for event loops. Each event consumes one standard
    exponential (waiting time), one uniform for the site and one uniform
    for the heat-bath update, always in that order.
    """

    def __init__(self, generator: np.random.Generator, block: int = 4096):
        self._gen = generator
        self._block = block
        self._pos = block
        self._buf = None

    def _refill(self):
        self._buf = (
            self._gen.standard_exponential(self._block).tolist(),
            self._gen.random(self._block).tolist(),
            self._gen.random(self._block).tolist(),
        )
        self._pos = 0

    def next(self):
        if self._pos >= self._block:
            self._refill()
        i = self._pos
        self._pos += 1
        return self._buf[0][i], self._buf[1][i], self._buf[2][i]
