"""Python bindings for the diver renderer core."""

import json

from ._core import (  # noqa: F401
    CameraPose,
    DimensionError,
    Error,
    NumericError,
    ParseError,
    RangeError,
    Scene,
    ValidationError,
    basis_integral,
    chi,
    encode_png,
    load_scene,
    look_at,
    make_random_scene,
    make_two_object_scene,
    mc_render,
    parse_scene,
    pose_from_json,
    psnr,
    render,
    save_scene,
    serialize_scene,
    ssim,
    suite_names,
    swap_objects,
    variance_law_check,
)
from ._core import run_suite as _run_suite


def run_suite(name="all", seed=1):
    """Run a verification suite and return its summary as a dict."""
    return json.loads(_run_suite(name, seed))
