"""Named synthetic dataset recipes used by ``gen-synth`` and the test-suite.

``easy``
    two categories, six visually distinct classes.
``cooccurrence``
    two categories with disjoint three-class palettes; two classes of each
    palette have a pixel-identical twin in the other palette, and one twin
    pair only shows up in about half of its category's images.  Appearance
    alone cannot tell twins apart; which twin is plausible follows from
    what else is in the image.
``confusable``
    like ``cooccurrence`` but with a single twin pair that is always
    present, the setting the decorrelated forest is meant for.
``location``
    horizontal bands in a fixed top-to-bottom order with look-alike bands,
    so position carries information that appearance lacks.
"""

from .dataset import Appearance, Category, SynthSpec

PRESETS = ("easy", "cooccurrence", "confusable", "location")


def easy(n_train=40, n_val=10, n_test=20, size=64):
    apps = {
        "sky": Appearance((70, 130, 230), "flat", jitter=6),
        "grass": Appearance((40, 160, 50), "stripes", amplitude=25, period=3, jitter=4),
        "road": Appearance((110, 110, 110), "noise", amplitude=20),
        "water": Appearance((30, 60, 140), "checker", amplitude=20, period=4, jitter=4),
        "sand": Appearance((220, 200, 140), "noise", amplitude=12),
        "rock": Appearance((150, 90, 60), "checker", amplitude=30, period=2, jitter=4),
    }
    cats = (Category("field", ("sky", "grass", "road")), Category("coast", ("water", "sand", "rock")))
    return SynthSpec(apps, cats, n_train, n_val, n_test, size, size)


def cooccurrence(n_train=60, n_val=10, n_test=20, size=64):
    twin_a = Appearance((120, 120, 120), "noise", amplitude=40)
    twin_b = Appearance((160, 100, 60), "stripes", amplitude=30, period=2, jitter=10)
    apps = {
        "a1": twin_a,
        "b1": twin_b,
        "e1": Appearance((40, 170, 60), "flat", jitter=8),
        "a2": twin_a,
        "b2": twin_b,
        "e2": Appearance((40, 60, 200), "flat", jitter=8),
    }
    cats = (Category("one", ("a1", "b1", "e1"), (1.0, 0.2, 1.0)),
            Category("two", ("a2", "b2", "e2"), (1.0, 0.2, 1.0)))
    return SynthSpec(apps, cats, n_train, n_val, n_test, size, size)


def confusable(n_train=60, n_val=10, n_test=20, size=64):
    twin = Appearance((120, 120, 120), "noise", amplitude=40)
    apps = {
        "a": twin,
        "b": Appearance((200, 60, 60), "stripes", amplitude=30, period=3, jitter=6),
        "e": Appearance((40, 170, 60), "flat", jitter=8),
        "c": twin,
        "d": Appearance((60, 60, 200), "checker", amplitude=30, period=3, jitter=6),
        "f": Appearance((220, 200, 60), "flat", jitter=8),
    }
    cats = (Category("one", ("a", "b", "e")), Category("two", ("c", "d", "f")))
    return SynthSpec(apps, cats, n_train, n_val, n_test, size, size)


def location(n_train=40, n_val=20, n_test=20, size=64):
    haze = Appearance((140, 150, 160), "noise", amplitude=45)
    apps = {
        "sky": haze,
        "tree": Appearance((50, 120, 60), "checker", amplitude=30, period=3, jitter=8),
        "ground": haze,
    }
    cats = (Category("outdoor", ("sky", "tree", "ground")),)
    return SynthSpec(apps, cats, n_train, n_val, n_test, size, size, layout="bands",
                     portrait_fraction=0.25, band_jitter=0.3)


def get_preset(name, **kw):
    try:
        fn = {"easy": easy, "cooccurrence": cooccurrence, "confusable": confusable, "location": location}[name]
    except KeyError:
        raise ValueError("unknown preset %r (known: %s)" % (name, ", ".join(PRESETS))) from None
    return fn(**kw)
