from setuptools import setup, find_packages

setup(
    name="sola-engine",
    version="0.1.0",
    author="Your Name",
    description="Layer-wise hybrid linear/softmax attention backbone with analytical tooling.",
    python_requires=">=3.10",
    packages=find_packages(),
    package_data={"": ["presets/*.json"]},
    install_requires=[
        "dotenv>=0.9.9",
        "numpy>=1.26",
        "pydantic>=2.7",
        "scipy>=1.11",
    ],
    extras_require={
        "dev": [
            "pytest",
            "black",
        ],
    },
)
