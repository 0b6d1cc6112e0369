"""
Setup file for pixelvla, a desk-scale pixel-aware vision-language-action policy stack.
"""
import os

from pathlib import Path

from setuptools import find_packages, setup

README = open(Path(__file__).parent / 'README.rst').read()
CHANGELOG = open(Path(__file__).parent / 'CHANGELOG.rst').read()

def package_data(pkg, roots):
    """Generic function to find package_data.

    All of the files under each of the `roots` will be declared as package
    data for package `pkg`.

    """
    data = []
    for root in roots:
        for dirname, _, files in os.walk(os.path.join(pkg, root)):
            for fname in files:
                data.append(os.path.relpath(os.path.join(dirname, fname), pkg))

    return {pkg: data}


setup(
    name='pixelvla',
    description='Pixel-aware vision-language-action policy, annotation pipeline and trainer at desk scale',
    version='0.1.0',
    long_description=f'{README}\n\n{CHANGELOG}',
    long_description_content_type='text/x-rst',
    include_package_data=True,
    zip_safe=False,
    keywords='Django robotics vision-language-action imitation-learning lora',
    classifiers=[
        'Development Status :: 3 - Alpha',
        'Framework :: Django',
        'Framework :: Django :: 3.2',
        'Intended Audience :: Science/Research',
        'Natural Language :: English',
        'Programming Language :: Python :: 3',
        'Programming Language :: Python :: 3.8',
    ],
    python_requires='>=3.8',
    install_requires=[
        'Django~=3.2',
        'numpy>=1.22',
        'Pillow>=9.1',
        'cryptography>=3.4',
    ],
    extras_require={
        'test': [
            'ddt',
            'pytest',
            'pytest-django',
        ],
    },
    package_data=package_data('pixelvla', ['templates']),
    packages=find_packages(exclude=['settings']),
    entry_points={
        'console_scripts': [
            'pixelvla = pixelvla.cli:main',
        ],
    },
)
