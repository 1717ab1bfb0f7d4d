#pragma once

#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "steerlab/address.hpp"
#include "steerlab/tensor.hpp"

namespace steerlab {

enum class EditMode { Add, Replace, Zero };

std::string_view to_string(EditMode mode);
EditMode edit_mode_from_string(std::string_view name);

// One declarative edit at an address.
//
// The payload is either a single row (broadcast to every selected position) or
// a matrix whose row p is used at absolute position p. Zero carries no payload;
// the coefficient only matters for Add.
struct Intervention {
    ActivationAddress address;
    EditMode mode = EditMode::Add;
    Tensor payload;
    float coefficient = 1.0f;
    // Name of the stored vector the payload came from; required for the JSON
    // wire format.
    std::string payload_ref;

    static Intervention add(ActivationAddress a, std::vector<float> v, float coefficient, std::string ref = {});
    static Intervention replace(ActivationAddress a, Tensor payload, std::string ref = {});
    static Intervention zero(ActivationAddress a);
};

// Rows [first_position, first_position + rows) of an activation, possibly a
// column slice of a wider buffer.
struct ActivationView {
    float* data = nullptr;
    int rows = 0;
    int cols = 0;
    size_t stride = 0;
    int first_position = 0;

    float* row(int r) const { return data + size_t(r) * stride; }
};

// Applies `iv` to the rows of `view` whose absolute positions it selects.
// `seq_len` is the logical sequence length used to resolve Last and to bound
// explicit indices. Throws ShapeMismatch / InvalidAddress.
void apply(const ActivationView& view, int seq_len, const Intervention& iv);

// Whole-sequence convenience form: `a` holds positions [0, a.rows()).
Tensor apply(const Tensor& a, const Intervention& iv);

// Ordered edit list. Application order at a shared address is list order.
class InterventionSet {
public:
    InterventionSet() = default;
    InterventionSet(std::initializer_list<Intervention> items) : items_(items) {}
    explicit InterventionSet(std::vector<Intervention> items) : items_(std::move(items)) {}

    void push_back(Intervention iv) { items_.push_back(std::move(iv)); }
    bool empty() const noexcept { return items_.empty(); }
    size_t size() const noexcept { return items_.size(); }
    const Intervention& operator[](size_t i) const { return items_[i]; }
    auto begin() const { return items_.begin(); }
    auto end() const { return items_.end(); }
    const std::vector<Intervention>& items() const noexcept { return items_; }

private:
    std::vector<Intervention> items_;
};

struct Violation {
    size_t index = 0;
    std::string message;
};

// Checks every item; returns every violation found (empty means ok).
std::vector<Violation> validate(const InterventionSet& set, const ModelConfig& cfg);

// Throws InvalidAddress listing all violations.
void require_valid(const InterventionSet& set, const ModelConfig& cfg);

// base followed by extra. When `cfg` is given the result is re-validated.
InterventionSet compose(const InterventionSet& base, const InterventionSet& extra, const ModelConfig* cfg = nullptr);

// True when every edit selects positions by absolute index (All / Explicit),
// so a position's edit does not depend on how long the sequence has grown.
bool position_stationary(const InterventionSet& set);

// JSON wire format: [{layer, site, head?, positions, mode, coefficient?, payload_ref?}]
// where positions is "all", "last" or a list of indices. Payloads travel by
// reference only; `resolve` maps a payload_ref back to its row vector.
nlohmann::json to_json(const InterventionSet& set);
using PayloadResolver = std::function<std::vector<float>(const std::string& ref)>;
InterventionSet interventions_from_json(const nlohmann::json& j, const PayloadResolver& resolve);

nlohmann::json positions_to_json(const Positions& p);
Positions positions_from_json(const nlohmann::json& j);

}  // namespace steerlab
