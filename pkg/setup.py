# -*- coding: utf-8 -*-

from setuptools import find_packages, setup

from svnet.version import get_version

with open('README.rst') as f:
    readme = f.read()

setup(
    name='svnet',
    version=get_version(),
    description='Statistically validated networks of traders across timescales',
    long_description=readme,
    long_description_content_type="text/x-rst",
    packages=find_packages(exclude=['tests']),
    package_data={'svnet': ['data/*.toml']},
    include_package_data=True,
    license='MIT',
    entry_points={
        'console_scripts': [
            'svnet = svnet.__main__:main'
        ]
    },
    python_requires='>=3.8',
    install_requires=[
        'joblib',
        'networkx',
        'numpy',
        'pandas',
        'python-dateutil',
        'scikit-learn',
        'scipy',
        'statsmodels',
        'toml',
    ],
    classifiers=[
        "Programming Language :: Python",
        "Programming Language :: Python :: 3",
        'Programming Language :: Python :: 3.8',
        'Programming Language :: Python :: 3.9',
        'Programming Language :: Python :: 3.10',
        'Intended Audience :: Science/Research',
        'License :: OSI Approved :: MIT License',
        'Natural Language :: English',
        'Topic :: Scientific/Engineering :: Information Analysis',
    ],
)
