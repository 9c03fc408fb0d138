from setuptools import setup, find_packages

setup(
    name="mars-ct",
    description="Multi-layer residual sparsifying transforms for low-dose CT reconstruction",
    version="0.1.0",
    packages=find_packages(exclude=["tests"]),
    package_data={"mars": ["data/*.cfg"]},
    entry_points={"console_scripts": ["mars-ct=mars:main"]},
    setup_requires=["setuptools>40"],
    install_requires=[
        "numpy>=1.20",
        "scipy>=1.6.0",
        "matplotlib>=3.0.0",
        "moviepy>=1.0.0,<2.0",
        "pyfftw>=0.12.0",
        "scikit-image>=0.19.0",
        "Pillow>=8.0.0",
    ],
    extras_require={"test": ["pytest>=6.0"]},
)
