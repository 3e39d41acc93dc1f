""" rcprobe - relative clause minimal pairs and layer-wise probing of masked language models"""
from setuptools import setup

INSTALL_REQUIRES = [
    'plumbum',
    'requests',
    'setuptools',
    'numpy',
    'scikit-learn',
    'conllu',
]

setup(
    name='rcprobe',
    version='0.1.0',
    license='MIT',
    description='relative clause minimal pair datasets, probing classifiers and cloze metrics for MLMs',
    packages=['rcprobe'],
    install_requires=INSTALL_REQUIRES,
    python_requires='>=3.8',
    package_data={
        'rcprobe': [
            'data/*.jsonl',
        ]
    },
    entry_points={
        'console_scripts': [
            'rcprobe = rcprobe.cli:RcProbe',
        ],
    },
    extras_require={
        'mlm': ['torch', 'transformers'],
        'spacy': ['spacy'],
        'plot': ['matplotlib'],
    },
    classifiers=[
        'License :: OSI Approved :: MIT License',
        'Development Status :: 3 - Alpha',
        'Programming Language :: Python :: 3',
        'Topic :: Scientific/Engineering :: Artificial Intelligence',
        'Topic :: Text Processing :: Linguistic',
        'Environment :: Console',
        'Operating System :: OS Independent',
        'Intended Audience :: Science/Research',
    ],
)
