import pytest
from hypothesis import settings

from layerbound.model import ChannelParams, PathSpec, SlotGrid, VideoParams

settings.register_profile("repo", derandomize=True, deadline=None, max_examples=60)
settings.load_profile("repo")


@pytest.fixture
def grid():
    return SlotGrid(0.01)


def make_path(snr_db, hops=3, path_id="path", bw=2.2e6):
    return PathSpec(hops, ChannelParams.from_db(snr_db, bw), path_id)


def make_video(frame_bits):
    return VideoParams.from_frame_bits(frame_bits)


def template(max_layers=24):
    return VideoParams(100e3, 0.0, 2.5, 1, max_layers)
