// Pools a small synthetic dataset with ActionVLAD, average and max pooling
// and prints the validation accuracy of a linear classifier on each.

#include <cstdio>

#include "actionvlad/actionvlad.hpp"

using namespace actionvlad;

int main()
{
    SynthShape shape;
    shape.train_per_class = 20;
    shape.val_per_class = 6;
    auto data = synth_generate(make_shared_subaction_config(shape));
    auto train = data.samples(Split::train);
    auto val = data.samples(Split::val);

    std::vector<FeatureMap<double>> maps;
    for (const auto& s : train)
        maps.push_back(s.features);
    auto descriptors = sample_descriptors<double>(maps, 20000, 0);
    auto cb = kmeans_init<double>(descriptors, shape.dim, 8, 1.0, {});

    TrainConfig cfg;
    cfg.cells = cb.cells();
    cfg.alpha = cb.alpha();
    cfg.stage1_epochs = 30;
    for (auto pooling : {Pooling::vlad, Pooling::avg, Pooling::max}) {
        cfg.pooling = pooling;
        auto result = train_stage1(train, val, pooling == Pooling::vlad ? &cb : nullptr, data.classes, cfg);
        std::printf("%-5s val accuracy %.3f\n", std::string(to_string(pooling)).c_str(),
                    result.curve.back().val_accuracy);
    }
}
