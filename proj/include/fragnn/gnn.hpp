#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fragnn/fragdag.hpp"
#include "fragnn/molio.hpp"
#include "fragnn/tensor.hpp"

namespace fragnn {

struct ModelConfig {
    int hidden_dim = 64;
    int L1 = 3;                    // molecule GNN layers
    int L2 = 2;                    // fragment GNN layers
    int d = 3;                     // fragmentation depth
    int j = 4;                     // hydrogen tolerance
    int fourier_T = 10;
    bool use_frag_edges = false;   // +Edges variant
    bool use_collision_energy = true;
    uint64_t seed = 0;

    void validate() const;
    int ce_dim() const { return use_collision_energy ? fourier_T : 0; }
};

// Fourier embedding: component t = |sin(2*pi*z / 2^t)|, t = 1..T.
std::vector<double> fourier_embed(double z, int T);

struct ModelParams {
    ModelConfig config;
    std::vector<std::string> names;  // manifest order
    std::vector<Array> arrays;

    size_t total_count() const;
};

ModelParams init_params(const ModelConfig& config);

void save_checkpoint(const std::string& path, const ModelParams& params);
ModelParams load_checkpoint(const std::string& path);

// Flattened (node, hydrogen-offset) cell bookkeeping for one molecule.
// Cell order is node-major (ascending mask) then offset -j..+j; a trailing
// OS cell completes the softmax support.
struct CellLattice {
    std::vector<Mask> node_ids;          // dag order
    int num_nodes = 0;
    int num_offsets = 0;                 // 2j+1
    int num_cells = 0;                   // num_nodes * num_offsets
    std::vector<bool> cell_valid;
    std::vector<int> cell_node;          // cell -> node index
    std::vector<int> cell_offset;        // hydrogen offset of cell
    std::vector<int> cell_formula;       // cell -> formula group (invalid cells -> 0)
    std::vector<Formula> formulas;       // group -> total formula (with H)
    std::vector<double> formula_mass_da; // group -> mass in the chosen mode
    std::vector<int> node_iso_class;     // node index -> class
    AdductMode mode = AdductMode::Protonated;

    int cell_index(int node, int offset_pos) const { return node * num_offsets + offset_pos; }
};

CellLattice build_lattice(const FragDag& dag, int j, AdductMode mode,
                          const ElementTable& table = ElementTable::builtin());

// Everything about one molecule the model needs, model-independent.
struct MoleculeContext {
    MolGraph mol;
    MolGraph skeleton;
    FragDag dag;
    CellLattice lattice;
    std::vector<int> energies;  // merged collision energies, 0-200
};

MoleculeContext prepare_molecule(const MolGraph& mol, const ModelConfig& config,
                                 AdductMode mode = AdductMode::Protonated,
                                 size_t node_cap = 200000);

// One end-to-end differentiable pass. joint_col holds masked log
// probabilities for every (node, offset) cell plus the OS cell (last row).
struct ForwardResult {
    Tape tape;
    std::vector<Tape::Id> param_ids;   // aligned with ModelParams::arrays
    Tape::Id atom_embeddings = -1;     // n_atoms x hidden
    Tape::Id node_embeddings = -1;     // n_nodes x hidden
    Tape::Id joint_logits = -1;        // n_nodes x (2j+1), pre-mask
    Tape::Id os_logit = -1;            // 1x1
    Tape::Id joint_col = -1;           // (num_cells+1) x 1 log-probs
};

ForwardResult forward(const ModelParams& params, const MoleculeContext& ctx);

}  // namespace fragnn
