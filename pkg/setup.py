"""Setup script for Gamma-VAE."""

from setuptools import setup, find_packages

with open("requirements.txt") as f:
    requirements = f.read().splitlines()

setup(
    name="gamma-vae",
    version="0.1.0",
    description="Curvature-regularized variational autoencoders with exact decoder geometry",
    author="Your Name",
    packages=find_packages(exclude=["tests"]),
    install_requires=requirements,
    extras_require={
        "dev": ["pytest>=7.4"],
    },
    entry_points={
        "console_scripts": [
            "gammavae=src.gammavae:main",
        ],
    },
    python_requires=">=3.8",
)
