import numpy as np

SEED_BOUND = 2**64

INSTANCE_STREAM = 0
ENGINE_STREAM = 1


def derive_seed(master: int, *key: int) -> int:
    """Deterministic 64-bit seed of the task addressed by ``key`` under ``master``."""
    sequence = np.random.SeedSequence(master, spawn_key=key)
    return int(sequence.generate_state(1, dtype=np.uint64)[0])


def instance_rng(seed: int) -> np.random.Generator:
    """Stream that draws the synthetic instance of a trial."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(INSTANCE_STREAM,)))


def engine_rng(seed: int, attempt: int = 0) -> np.random.Generator:
    """Stream that initializes the engine; each reseed attempt gets its own."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(ENGINE_STREAM, attempt)))
