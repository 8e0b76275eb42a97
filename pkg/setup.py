from setuptools import find_packages, setup

with open("./README.md", encoding='utf-8') as in_:
    setup(
        name='smoothgam',
        version='1.0.0',
        packages=find_packages(where='src'),
        package_dir={
            "": "src"
        },
        license='MIT',
        description='Penalized regression spline generalized additive models with hierarchical smooths, Tweedie '
                    'responses, REML/GCV smoothness selection and delta-method inference.',
        long_description=in_.read(),
        long_description_content_type="text/markdown",
        python_requires='>=3.8',
        install_requires=[
            "attrs",
            "numpy",
            "pandas>=1.5",
            "scipy",
            "statsmodels",
            "xlsxwriter",
        ],
        extras_require={
            'testing': ['pytest', 'pytest-mock']
        },
        entry_points={
            'console_scripts': ['smoothgam=smoothgam.cli:main']
        },
    )
