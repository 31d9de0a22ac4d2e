import zlib

import numpy as np

from clustering.exceptions import InvalidArgument

SEED_BOUND = 2 ** 64


def named_stream(seed: int, name: str) -> np.random.Generator:
    """
    Independent generator for one consumer of a run seed. Streams are keyed by
    name, so adding a consumer leaves every other stream unchanged.
    :param seed: 64-bit run seed
    :param name: consumer name, e.g. 'holdout' or 'generate:half_moons'
    :return: numpy Generator
    """
    if seed is None or not 0 <= int(seed) < SEED_BOUND:
        raise InvalidArgument('Seed must be an integer in [0, 2^64)')
    sequence = np.random.SeedSequence(int(seed), spawn_key=(zlib.crc32(name.encode('utf-8')),))
    return np.random.default_rng(sequence)


def stream_seed(seed: int, name: str) -> int:
    """
    32-bit integer seed for libraries that take ``random_state`` integers
    """
    return int(named_stream(seed, name).integers(0, 2 ** 31 - 1))
