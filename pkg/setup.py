from setuptools import setup, find_packages

setup(
    name="aitfsim",
    version="1.0.0",
    description="Deterministic simulator for AITF filter propagation",
    packages=find_packages(exclude=["examples", "examples.*"]),
    install_requires=[
        "PyYAML>=6.0",
    ],
    extras_require={
        "test": [
            "pytest>=7.0",
        ],
    },
    entry_points={
        "console_scripts": [
            "aitfsim=aitfsim.cli:main",
        ],
    },
    python_requires=">=3.9",
)
