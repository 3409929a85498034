//! Circuit compilation: gate fetching, slice construction, LUT packing,
//! bytecode emission and in-place mutation of a compiled program.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::sync::Arc;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::config::{CHANNELS, GLUT_ADDR_BITS, GLUT_CAPACITY, MIN_CYCLES};
use crate::file::{Program, ProgramMeta};
use crate::jaqal::{BlockId, BlockKind, GateId, Node, Tir};
use crate::lut::bytecode::resolve;
use crate::lut::program::{encode_writes, mlut_writes};
use crate::lut::{address_stage_ratio, gate_stage_ratio, Bytecode, BytecodeItem, LutError, LutImage, PulseManager, Write};
use crate::provider::{GateKey, Provider, ProviderError, Scope};
use crate::pulse::{quantize_pulse, GateDefinition, PulseError, PulseRef};
use crate::sched::{
    check_order, merge, pad, serial_durations, GateSlice, PaddedSlice, SchedError, SliceTable,
    DEFAULT_FIFO_DEPTH,
};
use crate::word::{PulseletWord, StoredWord};

#[derive(Debug, Error)]
pub enum CompileError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("gate '{gate}': {source}")]
    Pulse { gate: String, source: PulseError },
    #[error("slice [{gates}]: {source}")]
    Sched { gates: String, source: SchedError },
    #[error(transparent)]
    Lut(#[from] LutError),
    #[error("branches need {needed} address bits but only {available} are free")]
    BranchSpace { needed: u32, available: u32 },
    #[error("{0}")]
    Unsupported(String),
    #[error("nothing to mutate: {0}")]
    NothingToMutate(String),
}

#[derive(Debug, Clone)]
pub struct CompileOptions {
    pub fifo_depth: usize,
    /// Reject slices whose serial word order cannot keep every FIFO fed.
    pub check_schedule: bool,
}

impl Default for CompileOptions {
    fn default() -> Self {
        CompileOptions {
            fifo_depth: DEFAULT_FIFO_DEPTH,
            check_schedule: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompileWarning {
    pub slice: u16,
    pub gates: String,
    pub requested: u64,
    pub extended: u64,
}

impl fmt::Display for CompileWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "slice {} [{}]: padding remainder under {MIN_CYCLES} cycles, duration {} extended to {}",
            self.slice, self.gates, self.requested, self.extended
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompileStats {
    pub unique_gates: usize,
    pub fetched_definitions: usize,
    /// Distinct padded slices, i.e. normal GLUT ids in use.
    pub slices: usize,
    pub invocations: u64,
    pub branch_positions: usize,
    pub bytecode_bytes: usize,
    pub plut_words: [usize; CHANNELS],
    pub mlut_entries: [usize; CHANNELS],
    pub glut_entries: [usize; CHANNELS],
    /// PLUT references made through the MLUT, summed over GLUT entries.
    pub references: usize,
}

impl CompileStats {
    pub fn address_stage_ratio(&self) -> f64 {
        address_stage_ratio(self.references)
    }

    pub fn gate_stage_ratio(&self) -> f64 {
        gate_stage_ratio(self.invocations as usize)
    }

    pub fn bytes_per_gate(&self) -> f64 {
        if self.invocations == 0 {
            return 0.0;
        }
        self.bytecode_bytes as f64 / self.invocations as f64
    }
}

impl fmt::Display for CompileStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "unique gates        {}", self.unique_gates)?;
        writeln!(f, "definitions fetched {}", self.fetched_definitions)?;
        writeln!(f, "gate table          {}", self.slices)?;
        writeln!(f, "invocations         {}", self.invocations)?;
        writeln!(f, "branch positions    {}", self.branch_positions)?;
        writeln!(
            f,
            "bytecode            {} bytes ({:.4} bytes/gate)",
            self.bytecode_bytes,
            self.bytes_per_gate()
        )?;
        writeln!(f, "channel  plut  mlut  glut")?;
        for ch in 0..CHANNELS {
            writeln!(
                f,
                "{ch:>7} {:>5} {:>5} {:>5}",
                self.plut_words[ch], self.mlut_entries[ch], self.glut_entries[ch]
            )?;
        }
        writeln!(f, "address-stage ratio {:.4}", self.address_stage_ratio())?;
        write!(f, "gate-stage ratio    {:.4}", self.gate_stage_ratio())
    }
}

/// Which gates a mutation recomputes.
#[derive(Debug, Clone, PartialEq)]
pub enum Selector {
    Key(GateKey),
    MutationId(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MutateMode {
    /// Refuse to touch PLUT words shared with gates outside the selection.
    #[default]
    Strict,
    /// Re-intern changed words and remap MLUT ranges when sharing forbids
    /// an in-place write.
    Remap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StageTimings {
    pub fetch: Duration,
    pub fit_map: Duration,
    pub encode: Duration,
    pub total: Duration,
}

impl fmt::Display for StageTimings {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let us = |d: Duration| d.as_secs_f64() * 1e6;
        writeln!(f, "stage        time (us)")?;
        writeln!(f, "fetch     {:>12.1}", us(self.fetch))?;
        writeln!(f, "fit+map   {:>12.1}", us(self.fit_map))?;
        writeln!(f, "encode    {:>12.1}", us(self.encode))?;
        write!(f, "total     {:>12.1}", us(self.total))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MutationReport {
    pub keys: Vec<GateKey>,
    /// Slices whose contents changed.
    pub slices: Vec<u16>,
    /// GLUT addresses whose word streams changed.
    pub entries: Vec<u16>,
    pub writes: Vec<Write>,
    /// Encoded programming stream for `writes`.
    pub stream: Vec<u8>,
    pub timings: StageTimings,
}

impl MutationReport {
    pub fn count(&self, f: impl Fn(&Write) -> bool) -> usize {
        self.writes.iter().filter(|w| f(w)).count()
    }

    pub fn plut_writes(&self) -> usize {
        self.count(|w| matches!(w, Write::Plut { .. }))
    }

    pub fn mlut_writes(&self) -> usize {
        self.count(|w| matches!(w, Write::Mlut { .. }))
    }

    pub fn glut_writes(&self) -> usize {
        self.count(|w| matches!(w, Write::Glut { .. }))
    }

    pub fn is_empty(&self) -> bool {
        self.writes.is_empty()
    }
}

type Recipe = Vec<GateKey>;

/// A compiled circuit plus everything needed to patch it later.
pub struct Compiled {
    provider: Arc<Provider>,
    options: CompileOptions,
    pulses: HashMap<GateKey, Arc<Vec<PulseRef>>>,
    slices: SliceTable,
    recipes: Vec<BTreeSet<Recipe>>,
    serial: Vec<[Vec<PulseletWord>; CHANNELS]>,
    key_slices: HashMap<GateKey, BTreeSet<u16>>,
    /// GLUT address to the slices whose words it streams.
    entries: BTreeMap<u16, Vec<u16>>,
    slice_entries: Vec<BTreeSet<u16>>,
    managers: Vec<PulseManager>,
    program: Program,
    warnings: Vec<CompileWarning>,
    unique_gates: usize,
    branch_positions: usize,
}

impl fmt::Debug for Compiled {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Compiled")
            .field("slices", &self.slices.len())
            .field("entries", &self.entries.len())
            .field("meta", &self.program.meta)
            .finish_non_exhaustive()
    }
}

fn recipe_name(r: &[GateKey]) -> String {
    r.iter().map(ToString::to_string).collect::<Vec<_>>().join(" | ")
}

/// Bits needed to number `n` things.
fn bits_for(n: usize) -> u32 {
    if n <= 1 {
        0
    } else {
        usize::BITS - (n - 1).leading_zeros()
    }
}

impl Compiled {
    fn new(provider: Arc<Provider>, options: CompileOptions) -> Compiled {
        Compiled {
            provider,
            options,
            pulses: HashMap::new(),
            slices: SliceTable::new(),
            recipes: Vec::new(),
            serial: Vec::new(),
            key_slices: HashMap::new(),
            entries: BTreeMap::new(),
            slice_entries: Vec::new(),
            managers: (0..CHANNELS as u8).map(PulseManager::new).collect(),
            program: Program::default(),
            warnings: Vec::new(),
            unique_gates: 0,
            branch_positions: 0,
        }
    }

    pub fn program(&self) -> &Program {
        &self.program
    }

    pub fn into_program(self) -> Program {
        self.program
    }

    pub fn warnings(&self) -> &[CompileWarning] {
        &self.warnings
    }

    pub fn slice_table(&self) -> &SliceTable {
        &self.slices
    }

    pub fn provider(&self) -> &Arc<Provider> {
        &self.provider
    }

    /// Gates that make up each slice, first recipe only.
    pub fn slice_gates(&self, id: u16) -> String {
        self.recipes[id as usize]
            .first()
            .map(|r| recipe_name(r))
            .unwrap_or_default()
    }

    pub fn manager(&self, channel: usize) -> &PulseManager {
        &self.managers[channel]
    }

    pub fn stats(&self) -> CompileStats {
        let image = &self.program.image;
        let mut s = CompileStats {
            unique_gates: self.unique_gates,
            fetched_definitions: self.pulses.len(),
            slices: self.slices.len(),
            invocations: self.program.bytecode.gate_count(),
            branch_positions: self.branch_positions,
            bytecode_bytes: self.program.bytecode.byte_len(),
            plut_words: [0; CHANNELS],
            mlut_entries: [0; CHANNELS],
            glut_entries: [0; CHANNELS],
            references: 0,
        };
        for (ch, lut) in image.channels.iter().enumerate() {
            s.plut_words[ch] = lut.plut.len();
            s.mlut_entries[ch] = lut.mlut.len();
            s.glut_entries[ch] = lut.glut.len();
            s.references += lut
                .glut
                .values()
                .map(|&(a, b)| (b - a) as usize + 1)
                .sum::<usize>();
        }
        s
    }

    /// One line per slice: id, duration, words per channel and its gates.
    pub fn dump_slices(&self) -> String {
        let mut out = String::from("id duration words[0..8] gates\n");
        for (id, s) in self.slices.iter() {
            let words: Vec<String> = self.serial[id as usize]
                .iter()
                .map(|w| w.len().to_string())
                .collect();
            out.push_str(&format!(
                "{id} {} {} {}\n",
                s.duration,
                words.join(","),
                self.slice_gates(id)
            ));
        }
        out
    }

    /// Serial stored words of one channel assembled from the slice table
    /// rather than the LUTs, taking `outcomes[k]` at the k-th branch (0 when
    /// the list runs out). `None` when an outcome selects no entry.
    pub fn reference_stream(&self, channel: usize, outcomes: &[u32]) -> Option<Vec<StoredWord>> {
        let mut out = Vec::new();
        let push = |address: u16, out: &mut Vec<StoredWord>| -> Option<()> {
            for &id in self.entries.get(&address)? {
                out.extend(self.serial[id as usize][channel].iter().map(|w| w.stored()));
            }
            Some(())
        };
        let mut k = 0;
        for item in self.program.bytecode.items() {
            match item.ok()? {
                BytecodeItem::Gate(id) => push(id, &mut out)?,
                BytecodeItem::Branch(bases) => {
                    let o = outcomes.get(k).copied().unwrap_or(0);
                    k += 1;
                    for b in bases {
                        push(resolve(b, o, self.program.meta.branch_shift), &mut out)?;
                    }
                }
            }
        }
        Some(out)
    }

    fn fetch_pulses(&mut self, key: &GateKey) -> Result<Arc<Vec<PulseRef>>, CompileError> {
        if let Some(p) = self.pulses.get(key) {
            return Ok(p.clone());
        }
        let def = self.provider.fetch(key)?;
        let p = quantize(key, &def)?;
        self.pulses.insert(key.clone(), p.clone());
        Ok(p)
    }

    fn build_slice(&mut self, recipe: &[GateKey]) -> Result<(PaddedSlice, Option<crate::sched::PadWarning>), CompileError> {
        let mut slice = GateSlice::default();
        for (i, key) in recipe.iter().enumerate() {
            let pulses = self.fetch_pulses(key)?;
            let g = GateSlice::from_pulses(pulses.iter().cloned());
            slice = if i == 0 {
                g
            } else {
                merge(&slice, &g).map_err(|source| CompileError::Sched {
                    gates: recipe_name(recipe),
                    source,
                })?
            };
        }
        let (padded, warning) = pad(&slice).map_err(|source| CompileError::Sched {
            gates: recipe_name(recipe),
            source,
        })?;
        if self.options.check_schedule {
            for ch in 0..CHANNELS {
                check_order(&serial_durations(&padded.slot_streams(ch)), self.options.fifo_depth)
                    .map_err(|source| CompileError::Sched {
                        gates: recipe_name(recipe),
                        source,
                    })?;
            }
        }
        Ok((padded, warning))
    }

    fn slice_for(&mut self, recipe: Recipe) -> Result<u16, CompileError> {
        let (padded, warning) = self.build_slice(&recipe)?;
        let before = self.slices.len();
        let id = self.slices.intern(padded)?;
        if self.slices.len() > before {
            self.recipes.push(BTreeSet::new());
            self.slice_entries.push(BTreeSet::new());
            let s = self.slices.get(id);
            self.serial.push(std::array::from_fn(|ch| s.serial_words(ch)));
            if let Some(w) = warning {
                self.warnings.push(CompileWarning {
                    slice: id,
                    gates: recipe_name(&recipe),
                    requested: w.requested,
                    extended: w.extended,
                });
            }
        }
        for k in &recipe {
            self.key_slices.entry(k.clone()).or_default().insert(id);
        }
        self.recipes[id as usize].insert(recipe);
        Ok(id)
    }

    fn entry_words(&self, ids: &[u16], channel: usize) -> Vec<PulseletWord> {
        let mut v = Vec::new();
        for &id in ids {
            v.extend_from_slice(&self.serial[id as usize][channel]);
        }
        v
    }

    fn register_entries(&mut self) -> Result<(), CompileError> {
        let mut totals = [0usize; CHANNELS];
        for s in &self.serial {
            for (ch, w) in s.iter().enumerate() {
                totals[ch] += w.len();
            }
        }
        for (ch, m) in self.managers.iter_mut().enumerate() {
            m.reserve(totals[ch], totals[ch]);
        }
        let entries: Vec<(u16, Vec<u16>)> = self.entries.iter().map(|(a, v)| (*a, v.clone())).collect();
        for (address, ids) in entries {
            for &id in &ids {
                self.slice_entries[id as usize].insert(address);
            }
            for ch in 0..CHANNELS {
                let words = self.entry_words(&ids, ch);
                self.managers[ch].register_gate(address, &words)?;
            }
        }
        self.refresh_image();
        Ok(())
    }

    fn refresh_image(&mut self) {
        self.program.image = LutImage {
            channels: self.managers.iter().map(|m| m.lut().clone()).collect(),
        };
    }

    /// Recomputes the selected gates and patches the tables in place.
    /// `replacement` substitutes a definition for a `Key` selector instead
    /// of asking the provider again.
    pub fn mutate(
        &mut self,
        selector: &Selector,
        replacement: Option<GateDefinition>,
        mode: MutateMode,
    ) -> Result<MutationReport, CompileError> {
        let t0 = Instant::now();
        let keys: Vec<GateKey> = match selector {
            Selector::Key(k) => {
                if !self.pulses.contains_key(k) {
                    return Err(CompileError::NothingToMutate(format!("gate '{k}' is not in the program")));
                }
                vec![k.clone()]
            }
            Selector::MutationId(m) => {
                let mut ks: Vec<GateKey> = self
                    .pulses
                    .iter()
                    .filter(|(_, ps)| ps.iter().any(|p| p.mutation_id == Some(*m)))
                    .map(|(k, _)| k.clone())
                    .collect();
                if ks.is_empty() {
                    return Err(CompileError::NothingToMutate(format!("no pulse carries mutation id {m}")));
                }
                ks.sort();
                ks
            }
        };
        let mut changed_keys = Vec::new();
        for k in &keys {
            let def = match &replacement {
                Some(d) => {
                    let errors = d.validate();
                    if !errors.is_empty() {
                        return Err(ProviderError::InvalidDefinition {
                            name: k.name.clone(),
                            errors: errors.iter().map(ToString::to_string).collect(),
                        }
                        .into());
                    }
                    Arc::new(d.clone())
                }
                None => {
                    self.provider.invalidate(Scope::Key(k));
                    self.provider.fetch(k)?
                }
            };
            let p = quantize(k, &def)?;
            if self.pulses.get(k) != Some(&p) {
                self.pulses.insert(k.clone(), p);
                changed_keys.push(k.clone());
            }
        }
        let t_fetch = t0.elapsed();

        let t1 = Instant::now();
        let mut slice_ids: BTreeSet<u16> = BTreeSet::new();
        for k in &changed_keys {
            if let Some(s) = self.key_slices.get(k) {
                slice_ids.extend(s.iter().copied());
            }
        }
        let mut changed_slices = Vec::new();
        for id in slice_ids {
            let recipes: Vec<Recipe> = self.recipes[id as usize].iter().cloned().collect();
            let mut new_slice: Option<PaddedSlice> = None;
            for r in &recipes {
                let (s, _) = self.build_slice(r)?;
                match &new_slice {
                    Some(prev) if *prev != s => {
                        return Err(CompileError::Unsupported(format!(
                            "mutation splits slice {id}, which several gate groups share"
                        )))
                    }
                    _ => new_slice = Some(s),
                }
            }
            let s = new_slice.expect("every slice has a recipe");
            if s != *self.slices.get(id) {
                self.serial[id as usize] = std::array::from_fn(|ch| s.serial_words(ch));
                self.slices.replace(id, s);
                changed_slices.push(id);
            }
        }
        let mut addresses: BTreeSet<u16> = BTreeSet::new();
        for &id in &changed_slices {
            addresses.extend(self.slice_entries[id as usize].iter().copied());
        }
        let mut writes = Vec::new();
        let mut touched = BTreeSet::new();
        for ch in 0..CHANNELS {
            let changes: Vec<(u16, Vec<StoredWord>)> = addresses
                .iter()
                .filter_map(|&a| {
                    let ids = &self.entries[&a];
                    let new: Vec<StoredWord> = self.entry_words(ids, ch).iter().map(|w| w.stored()).collect();
                    let old = self.managers[ch].lut().decompress(a).unwrap_or_default();
                    (old != new).then_some((a, new))
                })
                .collect();
            touched.extend(changes.iter().map(|(a, _)| *a));
            self.patch_channel(ch, &changes, mode, &mut writes)?;
        }
        self.refresh_image();
        let t_fit = t1.elapsed();

        let t2 = Instant::now();
        let stream = encode_writes(&writes);
        let t_encode = t2.elapsed();
        Ok(MutationReport {
            keys: changed_keys,
            slices: changed_slices,
            entries: touched.into_iter().collect(),
            writes,
            stream,
            timings: StageTimings {
                fetch: t_fetch,
                fit_map: t_fit,
                encode: t_encode,
                total: t0.elapsed(),
            },
        })
    }

    fn patch_channel(
        &mut self,
        ch: usize,
        changes: &[(u16, Vec<StoredWord>)],
        mode: MutateMode,
        writes: &mut Vec<Write>,
    ) -> Result<(), CompileError> {
        if changes.is_empty() {
            return Ok(());
        }
        let channel = ch as u8;
        let m = &self.managers[ch];
        let lut = m.lut();
        let affected: BTreeSet<u16> = changes.iter().map(|(a, _)| *a).collect();
        let users = lut.plut_users();

        // Try rewriting PLUT words in place: every changed position must
        // agree on the replacement and no outside gate may read the word.
        let mut proposals: BTreeMap<u16, StoredWord> = BTreeMap::new();
        let mut in_place = true;
        let mut shared = None;
        for (a, new) in changes {
            let (start, stop) = lut.glut[a];
            let old = &lut.mlut[start as usize..=stop as usize];
            if old.len() != new.len() {
                in_place = false;
                continue;
            }
            for (i, &pa) in old.iter().enumerate() {
                if lut.plut[pa as usize] == new[i] {
                    continue;
                }
                match proposals.get(&pa) {
                    Some(w) if *w != new[i] => in_place = false,
                    _ => {
                        proposals.insert(pa, new[i]);
                    }
                }
                if users[pa as usize].iter().any(|u| !affected.contains(u)) {
                    shared.get_or_insert(pa);
                    in_place = false;
                }
            }
        }
        if in_place {
            for (a, new) in changes {
                let (start, stop) = lut.glut[a];
                for (i, &pa) in lut.mlut[start as usize..=stop as usize].iter().enumerate() {
                    if proposals.get(&pa).is_some_and(|w| *w != new[i]) {
                        in_place = false;
                    }
                }
            }
            if proposals.iter().any(|(&pa, w)| m.address_of(w).is_some_and(|b| b != pa)) {
                in_place = false;
            }
        }
        if in_place {
            let m = &mut self.managers[ch];
            for (&address, &word) in &proposals {
                m.write_plut(address, word);
                writes.push(Write::Plut {
                    channel,
                    address,
                    word,
                });
            }
            return Ok(());
        }
        if let (MutateMode::Strict, Some(address)) = (mode, shared) {
            return Err(LutError::SharedDataConflict { channel, address }.into());
        }
        let m = &mut self.managers[ch];
        for (a, new) in changes {
            let mut addrs = Vec::with_capacity(new.len());
            for w in new {
                let before = m.lut().plut.len();
                let pa = m.intern_stored(*w)?;
                if m.lut().plut.len() > before {
                    writes.push(Write::Plut {
                        channel,
                        address: pa,
                        word: *w,
                    });
                }
                addrs.push(pa);
            }
            let before = m.lut().mlut.len();
            let bounds = m.map_range(&addrs)?;
            let after = m.lut().mlut.len();
            if after > before {
                let tail = m.lut().mlut[before..after].to_vec();
                writes.extend(mlut_writes(channel, before as u16, &tail));
            }
            if m.lut().glut.get(a) != Some(&bounds) {
                m.set_glut(*a, bounds)?;
                writes.push(Write::Glut {
                    channel,
                    id: *a,
                    bounds: Some(bounds),
                });
            }
        }
        Ok(())
    }
}

fn quantize(key: &GateKey, def: &GateDefinition) -> Result<Arc<Vec<PulseRef>>, CompileError> {
    def.pulses
        .iter()
        .map(|p| {
            quantize_pulse(p).map(Arc::new).map_err(|source| CompileError::Pulse {
                gate: key.to_string(),
                source,
            })
        })
        .collect::<Result<Vec<_>, _>>()
        .map(Arc::new)
}

enum CaseLayout {
    /// One GLUT entry per position, same count for every case.
    Positions(Vec<u16>),
    /// The whole case fused into one entry.
    Composite(Vec<u16>),
}

struct BranchRecord {
    bases: Vec<u16>,
    cases: Vec<(u32, CaseLayout)>,
}

struct Lowering<'t> {
    tir: &'t Tir,
    out: Compiled,
    gate_ids: HashMap<GateId, u16>,
    block_ids: HashMap<BlockId, u16>,
    branchy: HashMap<BlockId, bool>,
    branch_bases: HashMap<BlockId, Option<Vec<u16>>>,
    records: Vec<BranchRecord>,
    next_base: usize,
    width: Option<u32>,
    nop: Option<u16>,
    bytecode: Bytecode,
}

impl Lowering<'_> {
    fn key(&self, g: GateId) -> GateKey {
        let e = self.tir.gate(g);
        GateKey::new(e.name.clone(), e.args.clone())
    }

    fn gate(&mut self, g: GateId) -> Result<u16, CompileError> {
        if let Some(&id) = self.gate_ids.get(&g) {
            return Ok(id);
        }
        let id = self.out.slice_for(vec![self.key(g)])?;
        self.gate_ids.insert(g, id);
        Ok(id)
    }

    fn parallel(&mut self, b: BlockId) -> Result<u16, CompileError> {
        if let Some(&id) = self.block_ids.get(&b) {
            return Ok(id);
        }
        let mut recipe = Vec::new();
        for n in &self.tir.block(b).children {
            match n {
                Node::Gate(g) => recipe.push(self.key(*g)),
                Node::Block(_) => {
                    return Err(CompileError::Unsupported("parallel blocks may only hold gates".into()))
                }
            }
        }
        let id = self.out.slice_for(recipe)?;
        self.block_ids.insert(b, id);
        Ok(id)
    }

    fn has_branch(&mut self, b: BlockId) -> bool {
        if let Some(&v) = self.branchy.get(&b) {
            return v;
        }
        let block = self.tir.block(b);
        let v = matches!(block.kind, BlockKind::Branch { .. })
            || block.children.clone().iter().any(|n| match n {
                Node::Block(c) => self.has_branch(*c),
                Node::Gate(_) => false,
            });
        self.branchy.insert(b, v);
        v
    }

    /// Slice ids of a branch-free node in execution order.
    fn collect(&mut self, n: Node, ids: &mut Vec<u16>) -> Result<(), CompileError> {
        match n {
            Node::Gate(g) => ids.push(self.gate(g)?),
            Node::Block(b) => {
                let block = self.tir.block(b);
                match &block.kind {
                    BlockKind::Sequential => {
                        for c in block.children.clone() {
                            self.collect(c, ids)?;
                        }
                    }
                    BlockKind::Parallel => ids.push(self.parallel(b)?),
                    BlockKind::Loop(count) => {
                        let count = *count;
                        let mut body = Vec::new();
                        for c in block.children.clone() {
                            self.collect(c, &mut body)?;
                        }
                        for _ in 0..count {
                            ids.extend_from_slice(&body);
                        }
                    }
                    BlockKind::Branch { .. } => {
                        return Err(CompileError::Unsupported("branches cannot be nested inside branch cases".into()))
                    }
                }
            }
        }
        Ok(())
    }

    fn emit(&mut self, n: Node) -> Result<(), CompileError> {
        match n {
            Node::Gate(g) => {
                let id = self.gate(g)?;
                self.bytecode.push_gate(id);
            }
            Node::Block(b) => {
                let block = self.tir.block(b);
                match &block.kind {
                    BlockKind::Sequential => {
                        for c in block.children.clone() {
                            self.emit(c)?;
                        }
                    }
                    BlockKind::Parallel => {
                        let id = self.parallel(b)?;
                        self.bytecode.push_gate(id);
                    }
                    BlockKind::Loop(count) => {
                        let count = *count;
                        let children = block.children.clone();
                        if self.has_branch(b) {
                            for _ in 0..count {
                                for &c in &children {
                                    self.emit(c)?;
                                }
                            }
                        } else {
                            let mut body = Vec::new();
                            for c in children {
                                self.collect(c, &mut body)?;
                            }
                            self.bytecode.push_repeated(&body, count);
                        }
                    }
                    BlockKind::Branch { width, outcomes } => {
                        let (width, outcomes) = (*width, outcomes.clone());
                        if let Some(bases) = self.branch(b, width, &outcomes)? {
                            self.bytecode.push_branch(&bases);
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn nop(&mut self) -> Result<u16, CompileError> {
        if let Some(id) = self.nop {
            return Ok(id);
        }
        let id = self.out.slice_for(Vec::new())?;
        self.nop = Some(id);
        Ok(id)
    }

    fn branch(&mut self, b: BlockId, width: u32, outcomes: &[u32]) -> Result<Option<Vec<u16>>, CompileError> {
        if let Some(bases) = self.branch_bases.get(&b) {
            return Ok(bases.clone());
        }
        match self.width {
            Some(w) if w != width => {
                return Err(CompileError::Unsupported(format!(
                    "branches measure {w} and {width} bits; one program uses one outcome width"
                )))
            }
            _ => self.width = Some(width),
        }
        let mut cases = Vec::new();
        for (i, c) in self.tir.block(b).children.clone().into_iter().enumerate() {
            let mut ids = Vec::new();
            self.collect(c, &mut ids)?;
            cases.push((outcomes[i], ids));
        }
        let counts: BTreeSet<usize> = cases.iter().map(|(_, ids)| ids.len()).collect();
        let positions = if counts.len() == 1 {
            *counts.first().unwrap()
        } else {
            1
        };
        if positions == 0 {
            self.branch_bases.insert(b, None);
            return Ok(None);
        }
        let layouts = if counts.len() == 1 {
            cases
                .into_iter()
                .map(|(o, ids)| (o, CaseLayout::Positions(ids)))
                .collect()
        } else {
            let mut v = Vec::new();
            for (o, ids) in cases {
                let ids = if ids.is_empty() { vec![self.nop()?] } else { ids };
                v.push((o, CaseLayout::Composite(ids)));
            }
            v
        };
        let bases: Vec<u16> = (self.next_base..self.next_base + positions).map(|a| a as u16).collect();
        self.next_base += positions;
        if self.next_base > GLUT_CAPACITY / 2 {
            return Err(CompileError::BranchSpace {
                needed: bits_for(self.next_base),
                available: GLUT_ADDR_BITS - 1,
            });
        }
        self.records.push(BranchRecord {
            bases: bases.clone(),
            cases: layouts,
        });
        self.branch_bases.insert(b, Some(bases.clone()));
        Ok(Some(bases))
    }

    fn finish(self) -> Result<Compiled, CompileError> {
        let shift = bits_for(self.next_base);
        let width = self.width.unwrap_or(0);
        let available = GLUT_ADDR_BITS - 1;
        if !self.records.is_empty() && shift + width > available {
            return Err(CompileError::BranchSpace {
                needed: shift + width,
                available,
            });
        }
        let mut out = self.out;
        for id in 0..out.slices.len() as u16 {
            out.entries.insert(id, vec![id]);
        }
        for r in &self.records {
            for (outcome, layout) in &r.cases {
                match layout {
                    CaseLayout::Positions(ids) => {
                        for (base, id) in r.bases.iter().zip(ids) {
                            out.entries.insert(resolve(*base, *outcome, shift), vec![*id]);
                        }
                    }
                    CaseLayout::Composite(ids) => {
                        out.entries.insert(resolve(r.bases[0], *outcome, shift), ids.clone());
                    }
                }
            }
        }
        out.branch_positions = self.next_base;
        out.program.bytecode = self.bytecode;
        out.program.meta = ProgramMeta {
            branch_shift: shift,
            outcome_bits: width,
        };
        out.register_entries()?;
        Ok(out)
    }
}

/// Compiles a lowered circuit against a provider.
pub fn compile(tir: &Tir, provider: Arc<Provider>, options: CompileOptions) -> Result<Compiled, CompileError> {
    let mut out = Compiled::new(provider, options);
    out.unique_gates = tir.gates.len();
    let mut l = Lowering {
        tir,
        out,
        gate_ids: HashMap::new(),
        block_ids: HashMap::new(),
        branchy: HashMap::new(),
        branch_bases: HashMap::new(),
        records: Vec::new(),
        next_base: 0,
        width: None,
        nop: None,
        bytecode: Bytecode::new(),
    };
    l.emit(Node::Block(tir.root))?;
    l.finish()
}

/// Source text to a compiled program with the standard provider settings.
pub fn compile_source(src: &str, provider: Arc<Provider>) -> Result<Compiled, crate::Error> {
    let tir = crate::jaqal::compile_tir(src)?;
    Ok(compile(&tir, provider, CompileOptions::default())?)
}
