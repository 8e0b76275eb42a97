from . import classes

Intercept = classes.InterceptTerm()
Linear = classes.LinearTerm()
LogLinear = Linear.with_transform('log')
Factor = classes.FactorTerm()

Smooth = classes.SmoothTerm()
BSplineSmooth = Smooth.with_basis('bs')
BySmooth = classes.BySmoothTerm()
ConstrainedInteraction = classes.ConstrainedInteractionTerm()
RandomSmooth = classes.RandomSmoothTerm()
RandomIntercept = classes.RandomInterceptTerm()

__all__ = ['Intercept', 'Linear', 'LogLinear', 'Factor', 'Smooth', 'BSplineSmooth', 'BySmooth',
           'ConstrainedInteraction', 'RandomSmooth', 'RandomIntercept']
