#!/usr/bin/env python3
"""
Setup script for the scene text detector CLI tool
"""

from setuptools import setup, find_packages

setup(
    name="std-detector",
    version="1.0.0",
    description="Scene text detector with kernel shrink/expand labels and a calibrated refinement branch",
    author="Scene Text Detector Team",
    packages=find_packages(exclude=["tests", "tests.*"]),
    py_modules=["cli"],
    install_requires=[
        "cryptography>=41.0.0",
        "pyyaml>=6.0",
        "numpy>=1.24",
        "opencv-python-headless>=4.8",
        "pyclipper>=1.3.0",
        "shapely>=2.0",
    ],
    entry_points={
        'console_scripts': [
            'std-detector=cli:main',
            'stdd=cli:main',
        ],
    },
    python_requires='>=3.8',
    classifiers=[
        "Development Status :: 4 - Beta",
        "Intended Audience :: Science/Research",
        "License :: OSI Approved :: MIT License",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.8",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
    ],
)
