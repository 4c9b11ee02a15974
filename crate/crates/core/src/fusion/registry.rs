use std::collections::BTreeMap;

use super::{fuse, FusionStrategy};
use crate::error::{Error, Result};
use crate::network::FeatureMap;

/// A named rule merging two latents of equal shape into one.
pub trait FusionRule: Send + Sync {
    fn name(&self) -> &str;
    fn fuse(&self, fa: &FeatureMap, fb: &FeatureMap) -> Result<FeatureMap>;
}

impl FusionRule for FusionStrategy {
    fn name(&self) -> &str {
        FusionStrategy::name(*self)
    }

    fn fuse(&self, fa: &FeatureMap, fb: &FeatureMap) -> Result<FeatureMap> {
        fuse(fa, fb, *self)
    }
}

/// Rules selectable by name. Starts with the four built-in kinds; other rules can be added.
pub struct FusionRegistry {
    rules: BTreeMap<String, Box<dyn FusionRule>>,
}

impl Default for FusionRegistry {
    fn default() -> Self {
        let mut r = Self {
            rules: BTreeMap::new(),
        };
        for k in FusionStrategy::ALL {
            r.register(Box::new(k)).expect("built-in names are unique");
        }
        r
    }
}

impl FusionRegistry {
    pub fn register(&mut self, rule: Box<dyn FusionRule>) -> Result<()> {
        let name = rule.name().to_string();
        if self.rules.contains_key(&name) {
            return Err(Error::Config(format!("fusion rule {name:?} already registered")));
        }
        self.rules.insert(name, rule);
        Ok(())
    }

    pub fn names(&self) -> Vec<&str> {
        self.rules.keys().map(String::as_str).collect()
    }

    pub fn get(&self, name: &str) -> Result<&dyn FusionRule> {
        self.rules.get(name).map(|r| r.as_ref()).ok_or_else(|| {
            Error::Config(format!(
                "unknown fusion strategy {name:?}; available: {}",
                self.names().join(", ")
            ))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct TakeA;

    impl FusionRule for TakeA {
        fn name(&self) -> &str {
            "take-a"
        }

        fn fuse(&self, fa: &FeatureMap, _: &FeatureMap) -> Result<FeatureMap> {
            Ok(fa.clone())
        }
    }

    #[test]
    fn lookup_and_extension() {
        let mut reg = FusionRegistry::default();
        assert_eq!(reg.names(), vec!["sfnn-identity", "sfnn-max", "sfnn-mean", "sfnn-sum"]);
        let err = reg.get("fl1n").err().unwrap().to_string();
        assert!(err.contains("sfnn-mean"));
        reg.register(Box::new(TakeA)).unwrap();
        assert!(reg.register(Box::new(TakeA)).is_err());
        let a = FeatureMap::new([1, 1, 1, 2], vec![1.0, 2.0]).unwrap();
        let b = FeatureMap::zeros([1, 1, 1, 2]).unwrap();
        assert_eq!(reg.get("take-a").unwrap().fuse(&a, &b).unwrap(), a);
        assert_eq!(reg.get("sfnn-max").unwrap().fuse(&a, &a).unwrap(), a);
    }
}
