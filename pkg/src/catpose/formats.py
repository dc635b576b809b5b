"""
On-disk codecs: millimeter depth PNGs, masks, color images, point cloud
PLYs and canonical JSON.
"""
import json
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError
from plyfile import PlyData, PlyElement

from catpose.errors import (CorruptPayloadError, DepthOutOfRangeError,
                            MissingFileError)

DEPTH_SCALE = 1000  # stored units per meter
DEPTH_NODATA = 0
MAX_DEPTH_M = 65.535

CLOUD_DTYPE = [('x', '<f8'), ('y', '<f8'), ('z', '<f8')]


def compress_depth(depth):
    """Meters to uint16 millimeters, rounding half up. 0 stays 0 (no hit).

    The product is rounded to 6 decimals first so that values such as
    1.2345 m, which land just below .5 in binary, still round up.
    """
    depth = np.asarray(depth, dtype=np.float64)
    if not np.all(np.isfinite(depth)) or np.any(depth < 0):
        raise DepthOutOfRangeError("Depth should be finite and >= 0")
    if np.any(depth > MAX_DEPTH_M):
        raise DepthOutOfRangeError(
            f"Depth {depth.max():.3f} m exceeds {MAX_DEPTH_M} m")

    mm = np.floor(np.round(depth * DEPTH_SCALE, 6) + 0.5)
    mm = np.minimum(mm, np.iinfo(np.uint16).max)
    return mm.astype(np.uint16)


def restore_depth(arr):
    return arr.astype(np.float64) / DEPTH_SCALE


def _check_exists(path):
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"{path} not found")
    return path


def _read_image(path):
    path = _check_exists(path)
    try:
        with Image.open(path) as img:
            img.load()
            return img.copy()
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as e:
        raise CorruptPayloadError(f"Cannot decode {path}: {e}") from e


def write_depth_png(depth, filename):
    mm = compress_depth(depth)
    Image.fromarray(mm).save(filename, format='PNG')
    return Path(filename)


def read_depth_png(filename):
    img = _read_image(filename)
    if img.mode not in ('I;16', 'I', 'I;16B', 'I;16L'):
        raise CorruptPayloadError(
            f"{filename} is not a 16 bit depth image (mode {img.mode})")
    arr = np.array(img)
    if arr.min() < 0 or arr.max() > np.iinfo(np.uint16).max:
        raise CorruptPayloadError(f"{filename} values outside uint16")
    return restore_depth(arr.astype(np.uint16))


def write_mask_png(mask, filename):
    arr = np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)
    Image.fromarray(arr).save(filename, format='PNG')
    return Path(filename)


def read_mask_png(filename):
    img = _read_image(filename)
    if img.mode != 'L':
        raise CorruptPayloadError(f"{filename} is not an 8 bit mask")
    return np.array(img) > 127


def write_rgb_png(rgb, filename):
    rgb = np.clip(np.asarray(rgb, dtype=np.float64), 0, 1)
    arr = np.round(rgb * 255).astype(np.uint8)
    Image.fromarray(arr).save(filename, format='PNG')
    return Path(filename)


def read_rgb_png(filename):
    img = _read_image(filename)
    return np.array(img.convert('RGB')).astype(np.float64) / 255


def write_cloud_ply(points, filename, comments=None):
    """Binary little-endian PLY with float64 vertices."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    vertex = np.empty(points.shape[0], dtype=CLOUD_DTYPE)
    vertex['x'] = points[:, 0]
    vertex['y'] = points[:, 1]
    vertex['z'] = points[:, 2]
    el = PlyElement.describe(vertex, 'vertex')
    PlyData([el], text=False, byte_order='<',
            comments=list(comments or [])).write(str(filename))
    return Path(filename)


def read_cloud_ply(filename):
    filename = _check_exists(filename)
    try:
        ply = PlyData.read(str(filename))
        vertex = ply['vertex']
        points = np.stack([vertex['x'], vertex['y'], vertex['z']], axis=1)
    except Exception as e:
        raise CorruptPayloadError(f"Cannot decode {filename}: {e}") from e
    return points.astype(np.float64).reshape(-1, 3)


def dumps_json(obj):
    """Canonical JSON text: sorted keys, fixed indentation, trailing
    newline."""
    return json.dumps(obj, indent=2, sort_keys=True) + '\n'


def write_json(obj, filename):
    with open(filename, 'w') as f:
        f.write(dumps_json(obj))
    return Path(filename)


def read_json(filename):
    filename = _check_exists(filename)
    try:
        with open(filename) as f:
            return json.load(f)
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise CorruptPayloadError(f"Cannot decode {filename}: {e}") from e
