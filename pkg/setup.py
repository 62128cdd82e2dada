#!/usr/bin/env python3
"""
Setup Script for CTAL-VAE
Installs the ctalvae and utils packages and the `ctalvae` command
"""

from pathlib import Path

from setuptools import find_packages, setup


def read_requirements():
    """Runtime requirements (everything above the dev section)"""
    lines = []
    for line in Path(__file__).with_name("requirements.txt").read_text().splitlines():
        if line.startswith("# Development"):
            break
        line = line.strip()
        if line and not line.startswith("#"):
            lines.append(line)
    return lines


setup(
    name="ctalvae",
    version="1.0.0",
    description="Few-shot cross-domain anomaly detection for network flows",
    long_description=Path(__file__).with_name("README.md").read_text(encoding="utf-8"),
    long_description_content_type="text/markdown",
    python_requires=">=3.8",
    packages=find_packages(include=["ctalvae", "ctalvae.*", "utils", "utils.*"]),
    install_requires=read_requirements(),
    extras_require={
        "dev": ["pytest>=7.4.0", "black>=23.0.0", "flake8>=6.0.0", "mypy>=1.5.0"],
    },
    entry_points={
        "console_scripts": ["ctalvae=ctalvae.main:main"],
    },
)
