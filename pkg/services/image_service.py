import io
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from PIL import Image as PILImage
from PIL import ImageDraw

from models.enums import (
    LUMA_BT601,
    MIN_PROCEDURAL_SIZE,
    PPM_MAXVAL,
    PROCEDURAL_SIZE_MULTIPLE,
    ProceduralKind,
    ResizeMode,
)
from models.image import Image
from numerics.random import derive_seed, philox
from utils.decorators import contract_operation, io_operation
from utils.exceptions import (
    ContractViolationException,
    DataFormatException,
    FileOperationException,
)
from utils.system.logger import logger
from utils.validation.validators import require, validate_integer, validate_seed

PathLike = Union[str, Path]

CHECKER_CELL = 8
PNM_SUFFIXES = (".ppm", ".pgm", ".pnm")
IMAGE_SUFFIXES = PNM_SUFFIXES + (".png",)


def _unit_grid(size: int) -> Tuple[np.ndarray, np.ndarray]:
    coords = np.arange(size, dtype=np.float64) / (size - 1)
    return np.meshgrid(coords, coords, indexing="xy")


def _gradient(size: int) -> np.ndarray:
    x, y = _unit_grid(size)
    return np.stack([x, 0.5 * (x + y), x * (1.0 - 0.5 * y)], axis=-1)


def _checker(rng: np.random.Generator, size: int, cell: int = CHECKER_CELL) -> np.ndarray:
    idx = np.arange(size) // cell
    parity = (idx[:, None] + idx[None, :] + int(rng.integers(0, 2))) % 2
    return np.repeat(parity[:, :, None].astype(np.float64), 3, axis=-1)


def _stripes(rng: np.random.Generator, size: int) -> np.ndarray:
    x, y = np.meshgrid(np.arange(size), np.arange(size), indexing="xy")
    out = np.zeros((size, size, 3))
    for period in (size / 2.0, size / 8.0, 4.0):
        angle = rng.uniform(0.0, np.pi)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        colour = rng.uniform(0.2, 1.0, size=3)
        wave = np.sin(2.0 * np.pi * (x * np.cos(angle) + y * np.sin(angle)) / period + phase)
        out += wave[:, :, None] * colour
    return 0.5 + out / 6.0


def _blobs(rng: np.random.Generator, size: int, count: int = 12) -> np.ndarray:
    x, y = np.meshgrid(np.arange(size), np.arange(size), indexing="xy")
    out = np.full((size, size, 3), 0.1)
    for _ in range(count):
        cx, cy = rng.uniform(0, size, size=2)
        radius = rng.uniform(size / 32.0, size / 6.0)
        colour = rng.uniform(0.0, 0.8, size=3)
        bump = np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2.0 * radius**2))
        out += bump[:, :, None] * colour
    return out / out.max()


def _glyphs(rng: np.random.Generator, size: int) -> np.ndarray:
    """Thin strokes and text-like marks on a light background."""
    canvas = PILImage.new("RGB", (size, size), color=(235, 232, 220))
    draw = ImageDraw.Draw(canvas)
    for _ in range(max(4, size // 8)):
        ink = tuple(int(v) for v in rng.integers(0, 90, size=3))
        x0, y0 = (int(v) for v in rng.integers(0, size, size=2))
        x1 = int(np.clip(x0 + rng.integers(-size // 4, size // 4 + 1), 0, size - 1))
        y1 = int(np.clip(y0 + rng.integers(-size // 4, size // 4 + 1), 0, size - 1))
        shape = int(rng.integers(0, 3))
        if shape == 0:
            draw.line([(x0, y0), (x1, y1)], fill=ink, width=1)
        elif shape == 1:
            box = [min(x0, x1), min(y0, y1), max(x0, x1), max(y0, y1)]
            draw.rectangle(box, outline=ink, width=1)
        else:
            box = [min(x0, x1), min(y0, y1), max(x0, x1) + 1, max(y0, y1) + 1]
            draw.arc(box, start=0, end=int(rng.integers(90, 361)), fill=ink, width=1)
    for row in range(2, size - 8, 12):
        letters = "".join(chr(int(c)) for c in rng.integers(65, 91, size=max(1, size // 8)))
        draw.text((2, row), letters, fill=(20, 20, 20))
    return np.asarray(canvas, dtype=np.float64) / PPM_MAXVAL


def _mixed(rng: np.random.Generator, size: int) -> np.ndarray:
    base = 0.35 * _gradient(size) + 0.35 * _blobs(rng, size, count=6)
    half = size // 2
    base[:half, :half] = 0.5 * base[:half, :half] + 0.5 * _checker(rng, half, cell=4)
    base[half:, half:] = 0.3 * base[half:, half:] + 0.7 * _glyphs(rng, half)
    base[:half, half:] = 0.5 * base[:half, half:] + 0.5 * _stripes(rng, half)
    return base


class ImageService:
    @staticmethod
    @contract_operation()
    def gen_procedural_hr(
        seed: int, size: int, kind: Union[ProceduralKind, str], channels: int = 3
    ) -> Image:
        """Deterministic synthetic HR image with structure at several frequencies."""
        seed = validate_seed(seed)
        size = validate_integer(size, min_value=MIN_PROCEDURAL_SIZE, field_name="size")
        if size % PROCEDURAL_SIZE_MULTIPLE != 0:
            raise ContractViolationException(
                f"procedural size must be a multiple of {PROCEDURAL_SIZE_MULTIPLE}, got {size}"
            )
        require(channels in (1, 3), f"channels must be 1 or 3, got {channels}")
        kind = ProceduralKind(kind)
        rng = philox(seed)
        builders = {
            ProceduralKind.GRADIENT: lambda: _gradient(size),
            ProceduralKind.CHECKER: lambda: _checker(rng, size),
            ProceduralKind.STRIPES: lambda: _stripes(rng, size),
            ProceduralKind.BLOBS: lambda: _blobs(rng, size),
            ProceduralKind.GLYPHS: lambda: _glyphs(rng, size),
            ProceduralKind.MIXED: lambda: _mixed(rng, size),
        }
        pixels = np.clip(builders[kind](), 0.0, 1.0)
        image = Image(pixels)
        return ImageService.rgb_to_y(image) if channels == 1 else image

    @staticmethod
    def generate_corpus(
        seed: int,
        count: int,
        size: int,
        kinds: Sequence[Union[ProceduralKind, str]] = (ProceduralKind.MIXED,),
        channels: int = 3,
        workers: int = 4,
    ) -> List[Image]:
        """``count`` images cycling through ``kinds``, one derived seed per image."""
        count = validate_integer(count, min_value=1, field_name="count")
        kinds = [ProceduralKind(k) for k in kinds]

        def build(index: int) -> Image:
            return ImageService.gen_procedural_hr(
                derive_seed(seed, "hr", index), size, kinds[index % len(kinds)], channels
            )

        with ThreadPoolExecutor(max_workers=workers) as pool:
            corpus = list(pool.map(build, range(count)))
        logger.info(
            "Procedural corpus generated",
            extra={"count": count, "size": size, "kinds": [k.value for k in kinds]},
        )
        return corpus

    @staticmethod
    @contract_operation()
    def rgb_to_y(img: Image) -> Image:
        """BT.601 luma, clamped to [0, 1]."""
        if img.channels != 3:
            raise ContractViolationException(
                f"rgb_to_y needs a 3-channel image, got {img.channels} channel(s)"
            )
        luma = img.pixels @ np.asarray(LUMA_BT601)
        return Image(np.clip(luma, 0.0, 1.0)[:, :, None])

    @staticmethod
    def luma_plane(img: Image) -> np.ndarray:
        """Y plane as an H x W array; single-channel images are taken as luma."""
        if img.channels == 1:
            return img.pixels[:, :, 0]
        return ImageService.rgb_to_y(img).pixels[:, :, 0]

    # -- resizing -------------------------------------------------------

    @staticmethod
    def _nearest_index(n_in: int, n_out: int) -> np.ndarray:
        centres = (np.arange(n_out) + 0.5) * n_in / n_out
        return np.minimum(np.floor(centres).astype(int), n_in - 1)

    @staticmethod
    def _bilinear_matrix(n_in: int, n_out: int) -> np.ndarray:
        pos = np.clip((np.arange(n_out) + 0.5) * n_in / n_out - 0.5, 0.0, n_in - 1)
        lo = np.floor(pos).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        frac = pos - lo
        weights = np.zeros((n_out, n_in))
        rows = np.arange(n_out)
        np.add.at(weights, (rows, lo), 1.0 - frac)
        np.add.at(weights, (rows, hi), frac)
        return weights

    @staticmethod
    def _area_matrix(n_in: int, n_out: int) -> np.ndarray:
        """Overlap weights of each output cell with the input cells."""
        edges_out = np.arange(n_out + 1) * n_in / n_out
        lo = np.maximum(edges_out[:-1, None], np.arange(n_in)[None, :])
        hi = np.minimum(edges_out[1:, None], np.arange(1, n_in + 1)[None, :])
        weights = np.clip(hi - lo, 0.0, None)
        return weights / weights.sum(axis=1, keepdims=True)

    @staticmethod
    def _area_integer(arr: np.ndarray, fy: int, fx: int) -> np.ndarray:
        # pairwise halving keeps power-of-two block means of equal values exact
        while fy % 2 == 0:
            arr = 0.5 * (arr[0::2] + arr[1::2])
            fy //= 2
        while fx % 2 == 0:
            arr = 0.5 * (arr[:, 0::2] + arr[:, 1::2])
            fx //= 2
        if fy > 1 or fx > 1:
            h, w, c = arr.shape
            arr = arr.reshape(h // fy, fy, w // fx, fx, c).mean(axis=(1, 3))
        return arr

    @staticmethod
    @contract_operation()
    def resize(
        img: Image, out_h: int, out_w: int, mode: Union[ResizeMode, str] = ResizeMode.AREA
    ) -> Image:
        out_h = validate_integer(out_h, min_value=1, field_name="out_h")
        out_w = validate_integer(out_w, min_value=1, field_name="out_w")
        mode = ResizeMode(mode)
        arr = img.pixels
        h, w = img.size
        if (h, w) == (out_h, out_w):
            return img

        if mode is ResizeMode.NEAREST:
            rows = ImageService._nearest_index(h, out_h)
            cols = ImageService._nearest_index(w, out_w)
            out = arr[rows][:, cols]
        elif mode is ResizeMode.AREA and h % out_h == 0 and w % out_w == 0:
            out = ImageService._area_integer(arr, h // out_h, w // out_w)
        else:
            build = (
                ImageService._bilinear_matrix
                if mode is ResizeMode.BILINEAR
                else ImageService._area_matrix
            )
            out = np.einsum("yh,hwc,xw->yxc", build(h, out_h), arr, build(w, out_w))
        return Image(np.clip(out, 0.0, 1.0))

    @staticmethod
    def downsample(img: Image, factor: int) -> Image:
        require(
            img.height % factor == 0 and img.width % factor == 0,
            f"image {img.height}x{img.width} is not divisible by {factor}",
        )
        return ImageService.resize(img, img.height // factor, img.width // factor, ResizeMode.AREA)

    # -- file I/O -------------------------------------------------------

    @staticmethod
    def encode_pnm(img: Image) -> bytes:
        magic = b"P6" if img.channels == 3 else b"P5"
        header = magic + f"\n{img.width} {img.height}\n{PPM_MAXVAL}\n".encode("ascii")
        data = np.round(img.pixels * PPM_MAXVAL).astype(np.uint8)
        return header + data.tobytes()

    @staticmethod
    def decode_pnm(blob: bytes) -> Image:
        """Parse a binary P5/P6 pixmap; errors carry the byte offset."""
        pos = 0

        def fail(message: str, offset: int) -> None:
            raise DataFormatException(message, details={"offset": offset})

        def skip_space() -> None:
            nonlocal pos
            while pos < len(blob):
                if blob[pos : pos + 1] == b"#":
                    while pos < len(blob) and blob[pos : pos + 1] not in (b"\n", b"\r"):
                        pos += 1
                elif blob[pos : pos + 1].isspace():
                    pos += 1
                else:
                    return

        def token() -> int:
            nonlocal pos
            skip_space()
            start = pos
            while pos < len(blob) and blob[pos : pos + 1].isdigit():
                pos += 1
            if pos == start:
                fail("expected a decimal header field", start)
            return int(blob[start:pos])

        if blob[:2] not in (b"P5", b"P6"):
            fail("not a binary portable pixmap (expected P5 or P6)", 0)
        channels = 3 if blob[:2] == b"P6" else 1
        pos = 2
        width, height, maxval = token(), token(), token()
        if width <= 0 or height <= 0:
            fail(f"invalid dimensions {width}x{height}", pos)
        if not 0 < maxval <= PPM_MAXVAL:
            fail(f"unsupported maxval {maxval}", pos)
        if pos >= len(blob) or not blob[pos : pos + 1].isspace():
            fail("missing whitespace after maxval", pos)
        pos += 1
        expected = width * height * channels
        payload = blob[pos : pos + expected]
        if len(payload) < expected:
            fail(
                f"truncated pixel data: expected {expected} bytes, found {len(payload)}",
                pos + len(payload),
            )
        data = np.frombuffer(payload, dtype=np.uint8).astype(np.float64) / maxval
        return Image(data.reshape(height, width, channels))

    @staticmethod
    @io_operation()
    def read_image(path: PathLike) -> Image:
        path = Path(path)
        try:
            blob = path.read_bytes()
        except OSError as e:
            raise FileOperationException(f"cannot read image {path}: {e}")
        if blob[:2] in (b"P5", b"P6"):
            return ImageService.decode_pnm(blob)
        if blob[:8] == b"\x89PNG\r\n\x1a\n":
            try:
                with PILImage.open(io.BytesIO(blob)) as decoded:
                    mode = "L" if decoded.mode in ("L", "LA", "I", "I;16") else "RGB"
                    array = np.asarray(decoded.convert(mode), dtype=np.float64)
            except (OSError, ValueError) as e:
                raise DataFormatException(f"malformed PNG {path}: {e}", details={"offset": 0})
            return Image(array / PPM_MAXVAL)
        raise DataFormatException(f"unsupported image format: {path}", details={"offset": 0})

    @staticmethod
    @io_operation()
    def write_image(img: Image, path: PathLike) -> Path:
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            if path.suffix.lower() == ".png":
                data = np.round(img.pixels * PPM_MAXVAL).astype(np.uint8)
                mode_data = data[:, :, 0] if img.channels == 1 else data
                PILImage.fromarray(mode_data).save(path, format="PNG")
            else:
                path.write_bytes(ImageService.encode_pnm(img))
        except OSError as e:
            raise FileOperationException(f"cannot write image {path}: {e}")
        return path

    @staticmethod
    def list_images(directory: PathLike) -> List[Path]:
        directory = Path(directory)
        if not directory.is_dir():
            raise FileOperationException(f"not a directory: {directory}")
        return sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)

    @staticmethod
    def load_directory(directory: PathLike) -> List[Tuple[str, Image]]:
        return [(p.name, ImageService.read_image(p)) for p in ImageService.list_images(directory)]

    @staticmethod
    def save_corpus(
        images: Sequence[Image], directory: PathLike, prefix: str = "hr", names: Optional[Sequence[str]] = None
    ) -> List[Path]:
        directory = Path(directory)
        names = names or [f"{prefix}_{i:04d}.ppm" for i in range(len(images))]
        paths = [ImageService.write_image(img, directory / name) for img, name in zip(images, names)]
        logger.info("Images written", extra={"count": len(paths), "directory": directory})
        return paths
