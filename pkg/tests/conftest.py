import numpy as np
import pytest

from styleclone.corpus import (make_speaker, make_style, render_utterance,
                               _sample_sentence)


@pytest.fixture(scope="session")
def toy_utterance():
    """One styled utterance with ground truth, shared across DSP tests."""
    spk = make_speaker(2, 8, np.random.default_rng(11))
    sty = make_style(1, np.random.default_rng(12))
    sent = _sample_sentence(np.random.default_rng(13))
    return render_utterance(spk, sty, sent, 4242, "fixture-utt")


@pytest.fixture(scope="session")
def flat_utterance():
    spk = make_speaker(1, 8, np.random.default_rng(21))
    sty = make_style(0, np.random.default_rng(22))
    sent = _sample_sentence(np.random.default_rng(23))
    return render_utterance(spk, sty, sent, 777, "fixture-flat")
