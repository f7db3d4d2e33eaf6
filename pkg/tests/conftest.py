import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from terrain_acoustics.data import ClipSet  # noqa: E402
from terrain_acoustics.nn import NetworkSpec  # noqa: E402

FS = 44100
CLIP = 8820  # 200 ms


def tone_clips(n_per_class=8, freqs=(1000.0, 5000.0), clips_per_recording=4, seed=0):
    """Two-or-more class toy set: one sinusoid per class plus a little noise."""
    rng = np.random.default_rng(seed)
    t = np.arange(CLIP) / FS
    audio, labels, recording = [], [], []
    rec = 0
    for c, f in enumerate(freqs):
        for i in range(n_per_class):
            if i % clips_per_recording == 0:
                rec += 1
            phase = rng.uniform(0, 2 * np.pi)
            audio.append(0.3 * np.sin(2 * np.pi * f * t + phase) + 0.01 * rng.standard_normal(CLIP))
            labels.append(c)
            recording.append(rec)
    names = tuple(f"class{c}" for c in range(len(freqs)))
    return ClipSet(np.stack(audio), np.asarray(labels), np.asarray(recording), FS, names)


def tiny_spec(variant="M1", classes=2, **kw):
    base = dict(variant=variant, channels=(4, 4, 4), fc_widths=(8, 8, 8), lstm_hidden=6,
                dropout=0.0, num_classes=classes, init_gain=2 ** 0.5)
    base.update(kw)
    return NetworkSpec(**base)


@pytest.fixture
def toy_clips():
    return tone_clips()


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
