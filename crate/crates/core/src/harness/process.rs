use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::victim::*;
use super::{AttackConfig, EntropyBudget, HarnessError};
use crate::crypto::{mix, PacHasher};
use crate::mitigation::{
    c3_data_xor, pa_sign, AosUnit, Aslr, C3Unit, CaliformsLayout, CaliformsUnit, Canary,
    CheckPlacement, MitigationId, Morpheus, Protection, TagCheckUnit, TaggedPointer,
};
use crate::side_channel::Noise;
use crate::sim::layout::{LAYOUT_META_BASE, MMAP_BASE};
use crate::sim::{Machine, MachineConfig};
use crate::Va;

/// Field contents of the Califorms object. Every byte is non-zero so a
/// substituted zero is distinguishable from real data.
pub const CALIFORMS_FIELD0: u64 = 0xa5a5_a5a5_a5a5_a5a5;

/// Ground truth the attacker is trying to recover. Tests compare against it;
/// attacks never read it.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Secrets {
    pub canary: u64,
    pub califorms: Option<CaliformsLayout>,
    /// Signed pointers to the two AOS objects.
    pub aos: Option<(TaggedPointer, TaggedPointer)>,
    /// Tagged pointer to the tag-checked object.
    pub tagged_ptr: Option<u64>,
    pub c3_victim_ca: Option<u64>,
    /// PA-signed pointer to the fixture slot.
    pub pa_signed: Option<u64>,
}

/// A victim program loaded into a machine with one mitigation enabled.
#[derive(Debug, Clone)]
pub struct VictimProcess {
    pub machine: Machine,
    pub victim: VictimTemplate,
    pub mitigation: MitigationId,
    pub config: AttackConfig,
    pub secrets: Secrets,
    /// Bits of the secret the attacker has to guess in this process.
    pub entropy_bits: u32,
    pub aslr: Option<Aslr>,
    pub morpheus: Option<Morpheus>,
    pub noise: Option<Noise>,
    pub rng: ChaCha8Rng,
    pub probe_iterations: u64,
    pub crashes_observed: u64,
    pub attempts: u64,
}

impl VictimProcess {
    pub fn new(mitigation: MitigationId, config: &AttackConfig) -> Result<Self, HarnessError> {
        let desc = mitigation.descriptor();
        if !desc.executable {
            return Err(HarnessError::NotExecutable(mitigation));
        }
        let seed = config.seed;
        let machine = Machine::new(MachineConfig {
            seed,
            ..config.machine.clone()
        });
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 0x7669_6374));
        let victim = VictimTemplate::build(mitigation == MitigationId::ArmPa);
        let canary = Canary::draw(&mut rng, CANARY_GLOBAL);
        let test_bits = |prod: u32| {
            config.entropy_bits.unwrap_or(if config.test_scale {
                AttackConfig::TEST_ENTROPY_BITS
            } else {
                prod
            })
        };
        let mut p = Self {
            machine,
            mitigation,
            config: config.clone(),
            secrets: Secrets {
                canary: canary.value,
                ..Secrets::default()
            },
            entropy_bits: desc.entropy_bits().unwrap_or(0),
            aslr: None,
            morpheus: None,
            noise: config.noise.map(|q| Noise::new(mix(seed, 0x6e6f), q)),
            rng,
            probe_iterations: 0,
            crashes_observed: 0,
            attempts: 0,
            victim,
        };
        canary.publish(&mut p.machine.state.memory);
        let landing = p.victim.landing();
        p.write(FIXTURE_SLOT, landing);

        let key: u64 = p.rng.gen();
        match mitigation {
            MitigationId::StackCanary => {}
            MitigationId::Aslr | MitigationId::Morpheus => {
                let prod = if mitigation == MitigationId::Morpheus {
                    60
                } else {
                    28
                };
                let bits = test_bits(prod);
                let aslr = Aslr::new(&["mmap"], bits);
                p.entropy_bits = bits;
                if mitigation == MitigationId::Morpheus {
                    let interval = config
                        .rerandomize_interval_ms
                        .unwrap_or(Morpheus::DEFAULT_INTERVAL_MS);
                    p.morpheus = Some(Morpheus::new(aslr.clone(), Some(interval)));
                }
                p.aslr = Some(aslr);
                p.rerandomize();
            }
            MitigationId::Califorms => {
                let layout = CaliformsLayout::randomize(&mut p.rng, CALIFORMS_OBJECT, &[8, 8]);
                p.write(layout.fields[0].0, CALIFORMS_FIELD0);
                p.write(layout.fields[1].0, landing);
                let mut unit = CaliformsUnit::default();
                unit.add_layout(&layout);
                p.machine.protection = Protection::Califorms(unit);
                p.secrets.califorms = Some(layout);
            }
            MitigationId::Aos => {
                let mut unit = AosUnit::new(key, config.pac_bits);
                let a = unit.aos_alloc(AOS_A, AOS_A_LEN);
                let b = unit.aos_alloc(AOS_B, AOS_B_LEN);
                p.write(PTR_A_SLOT, a.raw());
                p.write(PTR_B_SLOT, b.raw());
                p.write(AOS_A, landing);
                p.write(AOS_B, p.victim.correct_func());
                p.machine.protection = Protection::Aos(unit);
                p.secrets.aos = Some((a, b));
                p.entropy_bits = config.pac_bits;
            }
            MitigationId::NoFatTemporal | MitigationId::ArmMte => {
                let mut unit = if mitigation == MitigationId::ArmMte {
                    let placement = config
                        .placement
                        .ok_or(HarnessError::UnknownPlacement(mitigation))?;
                    TagCheckUnit::mte(placement)
                } else {
                    let bits = test_bits(16);
                    p.entropy_bits = bits;
                    TagCheckUnit::no_fat_temporal(bits)
                };
                if mitigation == MitigationId::ArmMte {
                    p.entropy_bits = unit.tag_bits;
                }
                let ptr = unit.alloc(&mut p.rng, TAGGED_OBJECT, 64);
                p.write(TAGGED_OBJECT, landing);
                p.machine.protection = Protection::Tag(unit);
                p.secrets.tagged_ptr = Some(ptr);
            }
            MitigationId::C3 => {
                let bits = test_bits(28);
                let unit = C3Unit::new(key, bits);
                let version = p.rng.gen_range(0..16u8);
                let ca = unit.codec.c3_encrypt_addr(C3_OBJECT, version);
                let fp = c3_data_xor(&p.victim.correct_func().to_le_bytes(), ca, &unit.keystream);
                p.machine.state.memory.write_bytes(C3_OBJECT, &fp);
                p.write(OBJ_PTR_SLOT, ca);
                p.machine.protection = Protection::C3(unit);
                p.secrets.c3_victim_ca = Some(ca);
                // The search runs over the ciphertext: address bits plus version.
                p.entropy_bits = bits + 4;
            }
            MitigationId::ArmPa => {
                p.machine.pac = PacHasher::new(key, config.pac_bits);
                p.secrets.pa_signed = Some(pa_sign(&p.machine.pac, FIXTURE_SLOT, 0).raw());
                p.entropy_bits = config.pac_bits;
            }
            other => return Err(HarnessError::NotExecutable(other)),
        }
        Ok(p)
    }

    pub fn write(&mut self, addr: Va, value: u64) {
        self.machine.state.memory.write(addr, 8, value);
    }

    pub fn read(&self, addr: Va) -> u64 {
        self.machine.state.memory.read(addr, 8)
    }

    /// Current randomized offset of the mmap segment.
    pub fn aslr_offset(&self) -> Option<u64> {
        self.aslr.as_ref()?;
        self.machine.state.segment("mmap").map(|s| s.rand_offset)
    }

    /// Effective start of the mmap segment.
    pub fn mmap_start(&self) -> Option<Va> {
        self.aslr_offset().map(|o| MMAP_BASE.wrapping_add(o))
    }

    /// Re-draw the segment offset and move the segment's contents. The
    /// offset is also stored in the unmapped layout page.
    pub fn rerandomize(&mut self) {
        if let Some(aslr) = &self.aslr {
            aslr.randomize(&mut self.machine.state, &mut self.rng);
            self.relocate_mmap();
        }
    }

    fn relocate_mmap(&mut self) {
        if let (Some(start), Some(off)) = (self.mmap_start(), self.aslr_offset()) {
            let landing = self.victim.landing();
            self.write(start, landing);
            self.write(LAYOUT_META_BASE, off);
        }
    }

    /// Advance the re-randomization clock. Returns whether the secret was
    /// re-drawn.
    pub fn tick(&mut self, now_ms: f64) -> bool {
        let Some(m) = &mut self.morpheus else {
            return false;
        };
        if m.tick(&mut self.machine.state, now_ms, &mut self.rng) {
            self.relocate_mmap();
            true
        } else {
            false
        }
    }

    pub fn placement(&self) -> Option<CheckPlacement> {
        let p = match &self.machine.protection {
            Protection::Tag(unit) => Some(unit.placement),
            _ => self.mitigation.descriptor().placement,
        };
        p.map(|p| {
            if self.machine.config.countermeasures.parallelize_checks
                && p == CheckPlacement::SequentialGuard
            {
                CheckPlacement::Parallel
            } else {
                p
            }
        })
    }

    pub fn budget(&self) -> EntropyBudget {
        let window = self.morpheus.as_ref().and_then(|m| m.interval_ms);
        EntropyBudget::new(self.entropy_bits, self.config.per_attempt_ms, window)
    }

    pub fn wall_model_ms(&self) -> f64 {
        self.attempts as f64 * self.config.per_attempt_ms
    }

    /// Fixture inputs for a single gadget run whose mitigation check passes
    /// (`pass`) or fails. Jump-shape fixtures point at a valid code pointer
    /// when the check passes.
    pub fn fixture_inputs(&self, pass: bool) -> GadgetInputs {
        let at = |base: u64| GadgetInputs {
            cond: 0,
            base,
            x: 0,
            mask: 0xff,
        };
        match self.mitigation {
            MitigationId::StackCanary => at(FIXTURE_SLOT),
            MitigationId::Aslr | MitigationId::Morpheus => {
                let start = self.mmap_start().expect("aslr process");
                at(if pass { start } else { start + 0x1000 })
            }
            MitigationId::Califorms => {
                let l = self.secrets.califorms.as_ref().expect("califorms process");
                at(if pass { l.fields[1].0 } else { l.redzones[0].0 })
            }
            MitigationId::Aos => {
                let (a, _) = self.secrets.aos.expect("aos process");
                at(if pass { a.raw() } else { a.raw() + AOS_A_LEN })
            }
            MitigationId::NoFatTemporal | MitigationId::ArmMte => {
                let ptr = self.secrets.tagged_ptr.expect("tag process");
                if pass {
                    return at(ptr);
                }
                let Protection::Tag(unit) = &self.machine.protection else {
                    unreachable!("tag process without a tag unit")
                };
                let wrong = (unit.pointer_tag(ptr) + 1) % (1 << unit.tag_bits);
                at(unit.tag_pointer(unit.strip(ptr), wrong))
            }
            MitigationId::C3 => {
                let ca = self.secrets.c3_victim_ca.expect("c3 process");
                if pass {
                    return at(ca);
                }
                at(self.unmapped_ca(ca))
            }
            MitigationId::ArmPa => {
                let signed = self.secrets.pa_signed.expect("pa process");
                at(if pass { signed } else { signed ^ 1 << 48 })
            }
            other => unreachable!("{other} has no fixture"),
        }
    }

    /// A CA with the victim's offset whose decoded address is unmapped.
    fn unmapped_ca(&self, ca: u64) -> u64 {
        let Protection::C3(unit) = &self.machine.protection else {
            unreachable!("c3 process without a c3 unit")
        };
        let (ct, offset) = unit.codec.split(ca);
        (1..)
            .map(|d| unit.codec.ca_from_parts(ct ^ d, offset))
            .find(|&g| {
                let va = unit.codec.c3_decrypt_addr(g).va().expect("well-formed CA");
                !self.machine.state.is_mapped(va, 1)
            })
            .expect("some CA decodes to an unmapped address")
    }
}
