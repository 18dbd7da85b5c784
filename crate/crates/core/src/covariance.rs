/// An isotropic covariance function `C(h)` with an optional nugget at the origin.
pub trait IsotropicCovariance: Send + Sync {
    /// Covariance at lag `h` excluding the nugget; at `h = 0` this is the
    /// partial sill (the continuous extension of `C` to the origin).
    fn continuous_part(&self, h: f64) -> f64;

    fn nugget(&self) -> f64;

    /// `C(h)` including the nugget jump at `h = 0`.
    fn eval(&self, h: f64) -> f64 {
        if h == 0.0 {
            self.continuous_part(0.0) + self.nugget()
        } else {
            self.continuous_part(h)
        }
    }

    fn partial_sill(&self) -> f64 {
        self.continuous_part(0.0)
    }

    /// `C(h) / C(0)` with the nugget excluded from numerator and denominator.
    fn correlation(&self, h: f64) -> f64 {
        self.continuous_part(h) / self.partial_sill()
    }

    /// `γ(h) = C(0) - C(h)` for `h > 0`, zero at the origin; `C(0)` includes the nugget.
    fn semivariogram(&self, h: f64) -> f64 {
        if h == 0.0 {
            0.0
        } else {
            (self.partial_sill() + self.nugget() - self.continuous_part(h)).max(0.0)
        }
    }
}

impl<T: IsotropicCovariance + ?Sized> IsotropicCovariance for &T {
    fn continuous_part(&self, h: f64) -> f64 {
        (**self).continuous_part(h)
    }

    fn nugget(&self) -> f64 {
        (**self).nugget()
    }
}

impl<T: IsotropicCovariance + ?Sized> IsotropicCovariance for Box<T> {
    fn continuous_part(&self, h: f64) -> f64 {
        (**self).continuous_part(h)
    }

    fn nugget(&self) -> f64 {
        (**self).nugget()
    }
}
