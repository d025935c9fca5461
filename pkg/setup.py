#!/usr/bin/env python3
"""
avseg 安装配置脚本
"""
from setuptools import setup, find_packages

from avseg import __version__

with open("README.md", "r", encoding="utf-8") as fh:
    long_description = fh.read()

setup(
    name="avseg",
    version=__version__,
    description="音视频实例感知分割：静音物体感知损失与音视频语义关联",
    long_description=long_description,
    long_description_content_type="text/markdown",
    packages=find_packages(exclude=["tests"]),
    classifiers=[
        "Programming Language :: Python :: 3",
        "Operating System :: OS Independent",
    ],
    python_requires=">=3.8",
    install_requires=[
        "numpy>=1.20.0",
        "scipy>=1.7.0",
        "pyyaml>=5.4",
        "loguru>=0.6.0",
        "tqdm>=4.60.0",
    ],
    extras_require={
        "test": ["pytest>=7.0", "hypothesis>=6.0"],
    },
    entry_points={
        "console_scripts": [
            "avseg=avseg.cli.__main__:main",
        ],
    },
    include_package_data=True,
)
