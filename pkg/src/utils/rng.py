import numpy as np

# Stream tags keep the consumers of one replica seed apart.
STREAM_HEADS = 0
STREAM_STATIONS = 1
STREAM_MARKOV = 2
STREAM_TYPICAL = 3
STREAM_QUADRATURE = 4


def make_rng(seed: int, *key: int) -> np.random.Generator:
    """Counter-based Philox generator for ``(seed, *key)``.

    Children are derived from the spawn key, never from draw order, so
    replica ``r`` sees the same stream whichever worker runs it.
    """
    sequence = np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=tuple(key))
    return np.random.Generator(np.random.Philox(sequence))


def replica_rng(seed: int, replica: int, stream: int = STREAM_HEADS, *key: int) -> np.random.Generator:
    """Stream ``stream`` of one replica; ``key`` separates retries of the same draw"""
    return make_rng(seed, replica, stream, *key)
