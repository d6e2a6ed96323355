"""Pinhole cameras, ray generation and image files (PFM, PNG)."""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass
class Camera:
    """Pinhole camera looking down its local -z axis; image v grows downward."""

    pose: np.ndarray  # (3, 4) world <- camera
    focal: float
    principal: tuple
    width: int
    height: int

    def __post_init__(self):
        self.pose = np.asarray(self.pose, dtype=np.float64).reshape(3, 4)
        rot = self.pose[:, :3]
        if not self.focal > 0.0:
            raise ValueError(f"focal length must be positive, got {self.focal}")
        if np.max(np.abs(rot.T @ rot - np.eye(3))) > 1e-6 or np.linalg.det(rot) < 0.0:
            raise ValueError("camera rotation is not orthonormal")
        self.principal = (float(self.principal[0]), float(self.principal[1]))
        self.width, self.height = int(self.width), int(self.height)

    @property
    def center(self):
        return self.pose[:, 3].copy()

    @classmethod
    def look_at(cls, eye, target, up, focal, width, height):
        eye, target, up = (np.asarray(v, dtype=np.float64) for v in (eye, target, up))
        back = eye - target
        back /= np.linalg.norm(back)
        right = np.cross(up, back)
        right /= np.linalg.norm(right)
        true_up = np.cross(back, right)
        pose = np.column_stack([right, true_up, back, eye])
        return cls(pose, focal, (width / 2.0, height / 2.0), width, height)

    def to_dict(self):
        return {"pose": self.pose.tolist(), "focal": self.focal,
                "principal": list(self.principal), "resolution": [self.width, self.height]}

    @classmethod
    def from_dict(cls, d):
        w, h = d["resolution"]
        return cls(np.array(d["pose"]), float(d["focal"]), tuple(d["principal"]), w, h)


def generate_ray(camera, u, v):
    """Ray through continuous image coordinates (u, v); pixel centers sit at i + 0.5."""
    d_cam = np.stack(np.broadcast_arrays((np.asarray(u, dtype=np.float64) - camera.principal[0]) / camera.focal,
                                         -(np.asarray(v, dtype=np.float64) - camera.principal[1]) / camera.focal,
                                         -np.ones(np.shape(u))), axis=-1)
    d = d_cam @ camera.pose[:, :3].T
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    origin = np.broadcast_to(camera.center, d.shape).copy()
    return origin, d


def camera_rays(camera):
    """Rays for every pixel center in row-major (v, u) order."""
    vv, uu = np.meshgrid(np.arange(camera.height) + 0.5, np.arange(camera.width) + 0.5, indexing="ij")
    o, d = generate_ray(camera, uu.ravel(), vv.ravel())
    return o, d


def ring_cameras(n, radius=3.0, elevation_deg=20.0, focal=None, width=32, height=32,
                 alternate_elevation=True):
    """``n`` cameras on a ring around the origin looking at it."""
    focal = focal if focal is not None else 1.4 * width
    cams = []
    for i in range(n):
        az = 2.0 * np.pi * i / n
        el = np.radians(elevation_deg * (1 if (i % 2 == 0 or not alternate_elevation) else -1))
        eye = radius * np.array([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])
        cams.append(Camera.look_at(eye, np.zeros(3), np.array([0.0, 0.0, 1.0]), focal, width, height))
    return cams


def save_cameras(cameras, path):
    Path(path).write_text(json.dumps({"cameras": [c.to_dict() for c in cameras]}, indent=1))


def load_cameras(path):
    data = json.loads(Path(path).read_text())
    return [Camera.from_dict(c) for c in data["cameras"]]


def write_pfm(path, image):
    """Little-endian PFM, rows stored bottom-up."""
    image = np.asarray(image, dtype=np.float32)
    if image.ndim == 2:
        header = b"Pf\n"
    elif image.ndim == 3 and image.shape[2] == 3:
        header = b"PF\n"
    else:
        raise ValueError(f"unsupported image shape {image.shape}")
    h, w = image.shape[:2]
    with open(path, "wb") as f:
        f.write(header)
        f.write(f"{w} {h}\n".encode())
        f.write(b"-1.0\n")
        f.write(np.ascontiguousarray(np.flipud(image)).astype("<f4").tobytes())


def read_pfm(path):
    with open(path, "rb") as f:
        ident = f.readline().strip()
        if ident == b"PF":
            channels = 3
        elif ident == b"Pf":
            channels = 1
        else:
            raise ValueError(f"{path}: not a PFM file (header {ident!r})")
        dims = f.readline().split()
        if len(dims) != 2:
            raise ValueError(f"{path}: malformed dimension line")
        w, h = int(dims[0]), int(dims[1])
        scale = float(f.readline().strip())
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(f.read(), dtype=dtype)
    if data.size != w * h * channels:
        raise ValueError(f"{path}: expected {w * h * channels} floats, found {data.size}")
    shape = (h, w, channels) if channels == 3 else (h, w)
    return np.flipud(data.reshape(shape)).astype(np.float32)


def write_png(path, image, gamma=2.2):
    from PIL import Image

    ldr = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0) ** (1.0 / gamma)
    Image.fromarray((ldr * 255.0 + 0.5).astype(np.uint8)).save(path)


def psnr(a, b, peak=1.0):
    mse = float(np.mean((np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)) ** 2))
    return float("inf") if mse == 0.0 else 10.0 * np.log10(peak * peak / mse)
