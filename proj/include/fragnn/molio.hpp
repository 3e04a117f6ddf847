#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace fragnn {

// Supported heavy elements, in feature one-hot order, plus hydrogen.
enum class Elem : uint8_t { C, O, N, P, S, F, Cl, Br, I, Se, Si, H };
constexpr int kNumHeavyElems = 11;

const char* elem_symbol(Elem e);
std::optional<Elem> elem_from_symbol(const std::string& s);

// Monoisotopic masses and default valences, loadable from a TSV file
// (symbol<TAB>mass<TAB>valence) and immutable afterwards.
class ElementTable {
public:
    static const ElementTable& builtin();
    static ElementTable load(const std::string& path);

    double mass(Elem e) const { return mass_[static_cast<int>(e)]; }
    int valence(Elem e) const { return valence_[static_cast<int>(e)]; }
    double proton_mass() const { return proton_mass_; }

private:
    std::array<double, 12> mass_{};
    std::array<int, 12> valence_{};
    double proton_mass_ = 1.007276466;
};

enum class BondOrder : uint8_t { Single, Double, Triple, Aromatic };

double bond_order_value(BondOrder o);  // aromatic counts as 1.5

struct Atom {
    Elem element = Elem::C;
    int charge = 0;       // [-2, +2]
    int radical = 0;      // [0, 4]
    bool aromatic = false;
    int implicit_h = 0;
};

struct Bond {
    int a = 0;
    int b = 0;
    BondOrder order = BondOrder::Single;
};

struct MolGraph {
    std::string id;
    std::vector<Atom> atoms;
    std::vector<Bond> bonds;

    int num_atoms() const { return static_cast<int>(atoms.size()); }
    int num_bonds() const { return static_cast<int>(bonds.size()); }
    std::vector<std::vector<int>> adjacency() const;  // neighbor atom indices
    void validate() const;  // simple graph, indices in range
};

struct ParseError : std::runtime_error {
    size_t offset;
    ParseError(const std::string& msg, size_t off)
        : std::runtime_error(msg + " (offset " + std::to_string(off) + ")"), offset(off) {}
};

struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Restricted SMILES: uppercase atoms from the element set, bonds - = #,
// branches, ring closures 1-9, bracket atoms with charge and explicit H.
// Lowercase aromatic atoms are accepted only when allow_aromatic is set.
MolGraph parse_smiles(const std::string& text, bool allow_aromatic = false,
                      const ElementTable& table = ElementTable::builtin());

std::string write_smiles(const MolGraph& g);

struct Formula {
    std::map<Elem, int> counts;

    int get(Elem e) const;
    void add(Elem e, int n);
    int total() const;
    bool operator==(const Formula& o) const { return counts == o.counts; }
    bool operator<(const Formula& o) const { return counts < o.counts; }
    std::string str() const;  // Hill-ish ordering, C then H then alphabetical
};

enum class AdductMode { Neutral, Protonated };

double formula_mass(const Formula& f, AdductMode mode,
                    const ElementTable& table = ElementTable::builtin());

// Induced subgraph on non-hydrogen atoms; attached-H counts (implicit plus
// explicit H neighbours) are stored in each atom's implicit_h slot.
MolGraph heavy_skeleton(const MolGraph& g);

Formula molecular_formula(const MolGraph& g);  // includes hydrogens

// Table 5-style featurization: element(11) degree(11) hybridization(5)
// charge(5) radical(5) ring(2) aromatic(2) chirality(3) + scaled mass.
constexpr int kAtomFeatureDim = 45;
constexpr int kBondFeatureDim = 4;

std::vector<std::array<double, kAtomFeatureDim>> atom_features(
    const MolGraph& g, const ElementTable& table = ElementTable::builtin());
std::vector<std::array<double, kBondFeatureDim>> bond_features(const MolGraph& g);

// JSONL interchange: one molecule per line.
std::string molgraph_to_json(const MolGraph& g);
MolGraph molgraph_from_json(const std::string& line);
std::vector<MolGraph> read_molecule_file(const std::string& path, bool allow_aromatic = false);
void write_molecule_file(const std::string& path, const std::vector<MolGraph>& mols);

}  // namespace fragnn
