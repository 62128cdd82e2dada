"""
File Manager Utility
Deterministic, atomic writes for checkpoints, reports and tabular outputs
"""

import json
import os
import tempfile
from pathlib import Path
from typing import Any, Optional, Union


class FileManager:
    """
    File writes rooted at a base directory
    """

    def __init__(self, base_path: Optional[Union[str, Path]] = None):
        """
        Initialize FileManager

        Args:
            base_path: Base directory for operations (defaults to current directory)
        """
        self.base_path = Path(base_path) if base_path else Path.cwd()

    def create_directory(self, path: Union[str, Path] = ".", exist_ok: bool = True) -> Path:
        """
        Create a directory (and parents)

        Args:
            path: Directory path to create
            exist_ok: Whether to ignore if directory exists

        Returns:
            Path object of created directory
        """
        dir_path = self._resolve_path(path)
        dir_path.mkdir(parents=True, exist_ok=exist_ok)
        return dir_path

    def write_bytes(self, path: Union[str, Path], data: bytes) -> Path:
        """
        Write bytes atomically (temp file + rename)

        Args:
            path: Destination path
            data: Content

        Returns:
            Resolved destination path
        """
        file_path = self._resolve_path(path)
        file_path.parent.mkdir(parents=True, exist_ok=True)

        fd, tmp_name = tempfile.mkstemp(dir=file_path.parent, prefix=f".{file_path.name}.")
        try:
            with os.fdopen(fd, 'wb') as f:
                f.write(data)
            os.replace(tmp_name, file_path)
        except BaseException:
            if os.path.exists(tmp_name):
                os.unlink(tmp_name)
            raise

        return file_path

    def write_text(self, path: Union[str, Path], content: str) -> Path:
        """Write UTF-8 text atomically with LF line endings"""
        return self.write_bytes(path, content.encode('utf-8'))

    def write_json(self, path: Union[str, Path], data: Any) -> Path:
        """
        Write JSON with stable key order so equal data gives equal bytes

        Args:
            path: Destination path
            data: JSON-serializable data

        Returns:
            Resolved destination path
        """
        content = json.dumps(data, indent=2, sort_keys=True, allow_nan=False) + "\n"
        return self.write_text(path, content)

    def read_bytes(self, path: Union[str, Path]) -> bytes:
        """Read a file relative to the base path"""
        return self._resolve_path(path).read_bytes()

    def _resolve_path(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        return path if path.is_absolute() else self.base_path / path
