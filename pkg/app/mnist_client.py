# app/mnist_client.py
import hashlib
import logging
from pathlib import Path
from typing import Dict, List, Optional

import httpx

from app.core.config import settings
from app.core.errors import ChecksumError

logger = logging.getLogger("condor-ordinal.mnist")

# Published MD5 digests of the gzipped IDX files
MNIST_MD5: Dict[str, str] = {
    "train-images-idx3-ubyte.gz": "f68b3c2dcbeaaa9fbdd348bbdeb94873",
    "train-labels-idx1-ubyte.gz": "d53e105ee54ea40749a09fcbcd1e9432",
    "t10k-images-idx3-ubyte.gz": "9fb629c4189551a2d022fa330f9573f3",
    "t10k-labels-idx1-ubyte.gz": "ec29112dd5afa0611ce80d1b7f02629c",
}

_client: Optional[httpx.Client] = None


def _get_client() -> httpx.Client:
    global _client
    if _client is None:
        _client = httpx.Client(
            base_url=settings.MNIST_BASE_URL,
            timeout=httpx.Timeout(settings.HTTP_TIMEOUT, connect=10.0),
            follow_redirects=True,
        )
    return _client


def close() -> None:
    """Close the shared client"""
    global _client
    if _client is not None:
        _client.close()
        _client = None


def md5_of(path: Path) -> str:
    digest = hashlib.md5()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def verify(path: Path, expected: str) -> None:
    actual = md5_of(path)
    if actual != expected:
        raise ChecksumError(f"MD5 mismatch: expected {expected}, got {actual}", path=path)


def download(name: str, dest: Path) -> Path:
    """GET one file into dest/name, streaming to a .part file first"""
    target = dest / name
    partial = target.with_name(target.name + ".part")
    client = _get_client()
    try:
        with client.stream("GET", name) as r:
            r.raise_for_status()
            with open(partial, "wb") as f:
                for chunk in r.iter_bytes():
                    f.write(chunk)
    except httpx.HTTPStatusError as e:
        partial.unlink(missing_ok=True)
        raise RuntimeError(f"MNIST {name} failed: {e.response.status_code}") from e
    except httpx.RequestError as e:
        partial.unlink(missing_ok=True)
        raise RuntimeError(f"MNIST mirror not reachable at {settings.MNIST_BASE_URL}: {e}") from e
    except OSError as e:
        partial.unlink(missing_ok=True)
        raise OSError(f"Could not write {partial}: {e}") from e
    partial.replace(target)
    return target


def fetch_mnist(dest: Optional[Path] = None, force: bool = False) -> List[Path]:
    """
    Download the four MNIST IDX files and verify their MD5 digests

    Files already present with the right digest are kept unless force=True.
    A file that fails verification is removed and ChecksumError is raised.
    """
    dest = Path(dest or settings.mnist_dir)
    dest.mkdir(parents=True, exist_ok=True)
    fetched = []
    try:
        for name, expected in MNIST_MD5.items():
            target = dest / name
            if target.exists() and not force:
                try:
                    verify(target, expected)
                    logger.info(f"{name} already present")
                    fetched.append(target)
                    continue
                except ChecksumError:
                    logger.warning(f"{name} present but corrupt, downloading again")
            logger.info(f"Downloading {name}")
            download(name, dest)
            try:
                verify(target, expected)
            except ChecksumError:
                target.unlink(missing_ok=True)
                raise
            fetched.append(target)
    finally:
        close()
    return fetched
