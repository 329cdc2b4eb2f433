use crate::error::{Error, Result};

/// Model hyper-parameters.
///
/// `n` hyper-latent channels, `m` latent channels split into `slices`
/// groups of `s` channels, local attention window `window`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Profile {
    pub id: u8,
    pub name: &'static str,
    pub n: usize,
    pub m: usize,
    pub s: usize,
    pub slices: usize,
    pub window: usize,
}

impl Profile {
    /// Full-size settings: N=192, M=320, S=32, 10 slices, K=5.
    pub const PAPER: Profile = Profile {
        id: 0,
        name: "paper",
        n: 192,
        m: 320,
        s: 32,
        slices: 10,
        window: 5,
    };

    /// Small settings for fast tests.
    pub const TOY: Profile = Profile {
        id: 1,
        name: "toy",
        n: 16,
        m: 32,
        s: 8,
        slices: 4,
        window: 5,
    };

    /// One slice only; exercises the no-previous-slice paths.
    pub const SINGLE_SLICE: Profile = Profile {
        id: 2,
        name: "single",
        n: 16,
        m: 8,
        s: 8,
        slices: 1,
        window: 5,
    };

    pub const ALL: [Profile; 3] = [Profile::PAPER, Profile::TOY, Profile::SINGLE_SLICE];

    pub fn from_id(id: u8) -> Result<Profile> {
        Profile::ALL
            .iter()
            .copied()
            .find(|p| p.id == id)
            .ok_or_else(|| Error::Format(format!("unknown profile id {}", id)))
    }

    pub fn from_name(name: &str) -> Result<Profile> {
        Profile::ALL
            .iter()
            .copied()
            .find(|p| p.name == name)
            .ok_or_else(|| Error::Config(format!("unknown profile {:?}", name)))
    }

    pub fn validate(&self) -> Result<()> {
        if self.s == 0 || self.slices == 0 || self.m != self.s * self.slices {
            return Err(Error::Config(format!(
                "profile {}: M={} must equal S={} x slices={}",
                self.name, self.m, self.s, self.slices
            )));
        }
        if self.window.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "profile {}: window {} must be odd",
                self.name, self.window
            )));
        }
        Ok(())
    }

    /// Width of every context feature tensor.
    pub fn ctx_channels(&self) -> usize {
        2 * self.s
    }

    /// Channel count of the hyper-prior feature.
    pub fn hyper_channels(&self) -> usize {
        2 * self.m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_profiles_are_valid() {
        for p in Profile::ALL {
            p.validate().unwrap();
            assert_eq!(Profile::from_id(p.id).unwrap(), p);
            assert_eq!(Profile::from_name(p.name).unwrap(), p);
        }
        assert_eq!(Profile::PAPER.m, Profile::PAPER.s * Profile::PAPER.slices);
    }

    #[test]
    fn rejects_bad_profiles() {
        let mut p = Profile::TOY;
        p.m = 30;
        assert!(p.validate().is_err());
        p = Profile::TOY;
        p.window = 4;
        assert!(p.validate().is_err());
        assert!(Profile::from_id(9).is_err());
        assert!(Profile::from_name("huge").is_err());
    }
}
